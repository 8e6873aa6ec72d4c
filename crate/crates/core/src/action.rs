//! Per-element categorical action space over busbar assignments.
//!
//! Every generator, load, and line gets its own small categorical: pick a
//! busbar, disconnect (where allowed), or do nothing. A full action is one
//! choice per element, and the policy head emits the concatenation of all
//! per-element logits. Masks narrow restricted elements down to their
//! do-nothing entry, which is always selectable.

use crate::grid::{BusAssignment, Grid, GridState, TopoDelta};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const GEN_DIM: usize = 4;
pub const LOAD_DIM: usize = 3;
pub const LINE_DIM: usize = 6;

pub const GEN_DO_NOTHING: usize = 1;
pub const LOAD_DO_NOTHING: usize = 0;
pub const LINE_DO_NOTHING: usize = 1;

/// One controllable element, in action-space order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Element {
    Gen(usize),
    Load(usize),
    Line(usize),
}

/// Shape of the factored action space: generators first, then loads, then
/// lines, each contributing one categorical of fixed dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionLayout {
    pub n_gen: usize,
    pub n_load: usize,
    pub n_line: usize,
    dims: Vec<usize>,
    offsets: Vec<usize>,
}

impl ActionLayout {
    pub fn new(grid: &Grid) -> Self {
        let (n_gen, n_load, n_line) = (grid.n_gen(), grid.n_load(), grid.n_line());
        let mut dims = Vec::with_capacity(n_gen + n_load + n_line);
        dims.extend(std::iter::repeat(GEN_DIM).take(n_gen));
        dims.extend(std::iter::repeat(LOAD_DIM).take(n_load));
        dims.extend(std::iter::repeat(LINE_DIM).take(n_line));
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        ActionLayout {
            n_gen,
            n_load,
            n_line,
            dims,
            offsets,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.dims.len()
    }

    /// Total logit width: the sum of all per-element dimensions.
    pub fn total(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.dims[self.dims.len() - 1])
    }

    pub fn dim(&self, e: usize) -> usize {
        self.dims[e]
    }

    pub fn offset(&self, e: usize) -> usize {
        self.offsets[e]
    }

    pub fn element(&self, e: usize) -> Element {
        if e < self.n_gen {
            Element::Gen(e)
        } else if e < self.n_gen + self.n_load {
            Element::Load(e - self.n_gen)
        } else {
            Element::Line(e - self.n_gen - self.n_load)
        }
    }

    pub fn do_nothing_index(&self, e: usize) -> usize {
        match self.element(e) {
            Element::Gen(_) => GEN_DO_NOTHING,
            Element::Load(_) => LOAD_DO_NOTHING,
            Element::Line(_) => LINE_DO_NOTHING,
        }
    }

    /// The all-do-nothing action.
    pub fn do_nothing(&self) -> Vec<usize> {
        (0..self.n_elements()).map(|e| self.do_nothing_index(e)).collect()
    }
}

/// How the environment ended up classifying a submitted action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionClass {
    Legal,
    Illegal,
    Ambiguous,
    Erroneous,
}

/// Selectability mask over the flat logit vector; `true` means allowed.
///
/// An element is restricted to do-nothing when its substation is in
/// cooldown; a line additionally when either endpoint substation is, or
/// when any of its own timers (cooldown, reconnection, attack) is running,
/// or while maintenance holds it open.
pub fn action_mask(grid: &Grid, state: &GridState) -> Vec<bool> {
    let layout = ActionLayout::new(grid);
    let mut mask = vec![true; layout.total()];
    for e in 0..layout.n_elements() {
        let restricted = match layout.element(e) {
            Element::Gen(g) => state.sub_cooldown[grid.gen_sub(g)] > 0,
            Element::Load(l) => state.sub_cooldown[grid.load_sub(l)] > 0,
            Element::Line(l) => {
                let (from, to) = grid.line_sub(l);
                state.line_cooldown[l] > 0
                    || state.reconnection_timer[l] > 0
                    || state.attack_timer[l] > 0
                    || state.in_maintenance(l)
                    || state.sub_cooldown[from] > 0
                    || state.sub_cooldown[to] > 0
            }
        };
        if restricted {
            let keep = layout.offset(e) + layout.do_nothing_index(e);
            for i in layout.offset(e)..layout.offset(e) + layout.dim(e) {
                mask[i] = i == keep;
            }
        }
    }
    mask
}

/// A decoded action: the assignments that would actually change, plus the
/// legality class the environment should record.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub delta: TopoDelta,
    pub class: ActionClass,
}

fn gen_target(choice: usize) -> Option<BusAssignment> {
    match choice {
        0 => Some(BusAssignment::Disconnected),
        2 => Some(BusAssignment::Busbar1),
        3 => Some(BusAssignment::Busbar2),
        _ => None,
    }
}

fn load_target(choice: usize) -> Option<BusAssignment> {
    match choice {
        1 => Some(BusAssignment::Busbar1),
        2 => Some(BusAssignment::Busbar2),
        _ => None,
    }
}

fn line_target(choice: usize) -> Option<(BusAssignment, BusAssignment)> {
    use BusAssignment::*;
    match choice {
        0 => Some((Disconnected, Disconnected)),
        2 => Some((Busbar1, Busbar1)),
        3 => Some((Busbar1, Busbar2)),
        4 => Some((Busbar2, Busbar1)),
        5 => Some((Busbar2, Busbar2)),
        _ => None,
    }
}

/// Decodes per-element choices against the current state.
///
/// Only assignments that differ from the current topology enter the delta,
/// so re-selecting the status quo is a no-op and stays legal even on a
/// masked element. The action is illegal when any changed element is
/// masked, and ambiguous when the choice vector is malformed.
pub fn decode(grid: &Grid, state: &GridState, mask: &[bool], choices: &[usize]) -> Decoded {
    let layout = ActionLayout::new(grid);
    let ambiguous = Decoded {
        delta: TopoDelta::default(),
        class: ActionClass::Ambiguous,
    };
    if choices.len() != layout.n_elements() || mask.len() != layout.total() {
        return ambiguous;
    }

    let mut delta = TopoDelta::default();
    let mut illegal = false;
    for (e, &choice) in choices.iter().enumerate() {
        if choice >= layout.dim(e) {
            return ambiguous;
        }
        let changed = match layout.element(e) {
            Element::Gen(g) => match gen_target(choice) {
                Some(t) if t != state.gen_bus[g] => {
                    delta.gens.push((g, t));
                    true
                }
                _ => false,
            },
            Element::Load(l) => match load_target(choice) {
                Some(t) if t != state.load_bus[l] => {
                    delta.loads.push((l, t));
                    true
                }
                _ => false,
            },
            Element::Line(l) => match line_target(choice) {
                Some(t) if t != state.line_bus[l] => {
                    delta.lines.push((l, t));
                    true
                }
                _ => false,
            },
        };
        if changed && !mask[layout.offset(e) + choice] {
            illegal = true;
        }
    }

    Decoded {
        delta,
        class: if illegal {
            ActionClass::Illegal
        } else {
            ActionClass::Legal
        },
    }
}

/// Samples uniformly over each element's unmasked choices.
pub fn sample_masked_uniform<R: Rng>(
    rng: &mut R,
    layout: &ActionLayout,
    mask: &[bool],
) -> Vec<usize> {
    (0..layout.n_elements())
        .map(|e| {
            let allowed: Vec<usize> = (0..layout.dim(e))
                .filter(|&c| mask[layout.offset(e) + c])
                .collect();
            if allowed.is_empty() {
                layout.do_nothing_index(e)
            } else {
                allowed[rng.gen_range(0..allowed.len())]
            }
        })
        .collect()
}
