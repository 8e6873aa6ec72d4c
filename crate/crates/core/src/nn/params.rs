//! Named parameter registry and the Adam optimizer.
//!
//! Parameters live outside the tape as `(name, Array2<f64>)` entries in a
//! fixed registration order; each forward pass pushes them as leaves and
//! gradient vectors come back in the same order, so the optimizer never
//! needs names at step time.

use ndarray::Array2;
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Clone, Debug, Default)]
pub struct Params {
    entries: Vec<(String, Array2<f64>)>,
    index: BTreeMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter '{name}'"
        );
        self.entries.push((name.to_string(), value));
    }

    /// Registers a dense weight with uniform Xavier/Glorot initialization:
    /// entries drawn from +-sqrt(6 / (fan_in + fan_out)).
    pub fn dense<R: Rng>(&mut self, rng: &mut R, name: &str, fan_in: usize, fan_out: usize) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        self.add(name, w);
    }

    /// Registers a zero bias row `[1, d]`.
    pub fn bias(&mut self, name: &str, d: usize) {
        self.add(name, Array2::zeros((1, d)));
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        let i = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        &self.entries[i].1
    }

    pub fn position(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn values(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.entries.iter().map(|(_, v)| v)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.entries.iter_mut().map(|(_, v)| v)
    }

    /// Total scalar count, for reporting.
    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

/// Adam with bias correction; gradient vectors must align with the
/// registry's entry order.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.values().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.values().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Array2<f64>]) {
        assert_eq!(grads.len(), self.m.len(), "gradient vector misaligned");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.values_mut().enumerate() {
            let g = &grads[i];
            debug_assert_eq!(g.dim(), p.dim());
            self.m[i].zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            self.v[i]
                .zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(&mut *p)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_respects_bounds_and_is_deterministic() {
        let mut a = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        a.dense(&mut rng, "w", 30, 70);
        let bound = (6.0 / 100.0f64).sqrt();
        assert!(a.get("w").iter().all(|&x| x.abs() < bound));

        let mut b = Params::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        b.dense(&mut rng, "w", 30, 70);
        assert_eq!(a.get("w"), b.get("w"));
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut params = Params::new();
        params.add("x", Array2::from_elem((1, 1), 4.0));
        let mut adam = Adam::new(&params, 0.1);
        for _ in 0..500 {
            let x = params.get("x")[(0, 0)];
            let grad = vec![Array2::from_elem((1, 1), 2.0 * (x - 1.5))];
            adam.step(&mut params, &grad);
        }
        assert!((params.get("x")[(0, 0)] - 1.5).abs() < 1e-3);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_are_rejected() {
        let mut p = Params::new();
        p.bias("b", 3);
        p.bias("b", 3);
    }
}
