//! The factored masked categorical the policy samples from.
//!
//! Plain-array counterpart of the tape's masked log-softmax: same
//! segments, same max-shifted arithmetic, so log-probabilities computed
//! here during rollouts agree with the tape values used in updates to
//! floating-point exactness.

use crate::action::ActionLayout;
use crate::nn::tape::MASKED_LOGP;
use rand::Rng;

/// Per-element categorical distributions over one flat logit vector.
pub struct MaskedCategoricalSet<'a> {
    layout: &'a ActionLayout,
    probs: Vec<f64>,
    logp: Vec<f64>,
    mask: Vec<bool>,
}

impl<'a> MaskedCategoricalSet<'a> {
    pub fn from_logits(layout: &'a ActionLayout, logits: &[f64], mask: &[bool]) -> Self {
        assert_eq!(logits.len(), layout.total());
        assert_eq!(mask.len(), layout.total());
        let mut logp = vec![MASKED_LOGP; logits.len()];
        let mut probs = vec![0.0; logits.len()];
        for e in 0..layout.n_elements() {
            let (off, len) = (layout.offset(e), layout.dim(e));
            let mut m = f64::NEG_INFINITY;
            for c in off..off + len {
                if mask[c] {
                    m = m.max(logits[c]);
                }
            }
            if m == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for c in off..off + len {
                if mask[c] {
                    z += (logits[c] - m).exp();
                }
            }
            let log_z = z.ln();
            for c in off..off + len {
                if mask[c] {
                    logp[c] = logits[c] - m - log_z;
                    probs[c] = logp[c].exp();
                }
            }
        }
        MaskedCategoricalSet {
            layout,
            probs,
            logp,
            mask: mask.to_vec(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    /// One choice per element: CDF walk over the unmasked entries, with
    /// floating-point residue clamped onto the last positive-probability
    /// choice. Fully masked elements fall back to do-nothing.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.layout.n_elements())
            .map(|e| {
                let (off, len) = (self.layout.offset(e), self.layout.dim(e));
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = None;
                for c in 0..len {
                    let p = self.probs[off + c];
                    if p > 0.0 {
                        last = Some(c);
                        acc += p;
                        if u < acc {
                            return c;
                        }
                    }
                }
                last.unwrap_or_else(|| self.layout.do_nothing_index(e))
            })
            .collect()
    }

    /// Deterministic choice: the highest-probability unmasked entry, ties
    /// broken toward the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.layout.n_elements())
            .map(|e| {
                let (off, len) = (self.layout.offset(e), self.layout.dim(e));
                let mut best = None;
                let mut best_p = f64::NEG_INFINITY;
                for c in 0..len {
                    if self.mask[off + c] && self.probs[off + c] > best_p {
                        best = Some(c);
                        best_p = self.probs[off + c];
                    }
                }
                best.unwrap_or_else(|| self.layout.do_nothing_index(e))
            })
            .collect()
    }

    /// Joint log-probability: the sum of the chosen per-element terms.
    pub fn log_prob(&self, choices: &[usize]) -> f64 {
        choices
            .iter()
            .enumerate()
            .map(|(e, &c)| self.logp[self.layout.offset(e) + c])
            .sum()
    }

    /// Joint entropy: the sum of per-element entropies over unmasked
    /// support.
    pub fn entropy(&self) -> f64 {
        let mut h = 0.0;
        for i in 0..self.probs.len() {
            if self.probs[i] > 0.0 {
                h -= self.probs[i] * self.logp[i];
            }
        }
        h
    }
}
