//! Permutations mapping item indices to 1-based display positions.

use crate::error::{CrumError, Result};
use crate::scalar::{upcast, Scalar};
use serde::{Deserialize, Deserializer, Serialize};

/// Bijection from item index (0-based) to display position (1-based).
///
/// `positions[i]` is the display position of item `i`; the positions of a
/// list of length `n` are exactly `{1..n}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Permutation {
    positions: Vec<usize>,
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let positions = Vec::<usize>::deserialize(deserializer)?;
        Permutation::from_positions(positions).map_err(serde::de::Error::custom)
    }
}

impl Permutation {
    /// Builds a permutation from per-item display positions, validating the
    /// bijection invariant.
    pub fn from_positions(positions: Vec<usize>) -> Result<Self> {
        let n = positions.len();
        let mut seen = vec![false; n];
        for &p in &positions {
            if p < 1 || p > n {
                return Err(CrumError::Domain(format!(
                    "position {p} outside 1..={n}"
                )));
            }
            if seen[p - 1] {
                return Err(CrumError::Domain(format!("duplicate position {p}")));
            }
            seen[p - 1] = true;
        }
        Ok(Permutation { positions })
    }

    /// Identity permutation: item `i` is displayed at position `i + 1`.
    pub fn identity(n: usize) -> Self {
        Permutation {
            positions: (1..=n).collect(),
        }
    }

    /// Builds a permutation from a display order: `order[t]` is the item
    /// index shown at position `t + 1`.
    pub fn from_order(order: &[usize]) -> Result<Self> {
        let n = order.len();
        let mut positions = vec![0usize; n];
        let mut seen = vec![false; n];
        for (t, &i) in order.iter().enumerate() {
            if i >= n {
                return Err(CrumError::Domain(format!("item index {i} outside 0..{n}")));
            }
            if seen[i] {
                return Err(CrumError::Domain(format!("duplicate item index {i}")));
            }
            seen[i] = true;
            positions[i] = t + 1;
        }
        Ok(Permutation { positions })
    }

    /// Sorts items by descending score; ties keep the smaller tie-break key
    /// first. Returns the permutation assigning position 1 to the best item.
    pub fn from_scores_desc<S: Scalar>(scores: &[S], tie_break: impl Fn(usize) -> usize) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            upcast(scores[b])
                .total_cmp(&upcast(scores[a]))
                .then_with(|| tie_break(a).cmp(&tie_break(b)))
        });
        Permutation::from_order(&order).expect("sorted index list is a valid order")
    }

    /// Number of items.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    /// True when the list is empty.
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Display position (1-based) of item `i`.
    pub fn position_of(&self, item: usize) -> usize {
        self.positions[item]
    }

    /// Per-item positions as a slice.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Display order: element `t` is the item shown at position `t + 1`.
    pub fn order(&self) -> Vec<usize> {
        let mut order = vec![0usize; self.positions.len()];
        for (i, &p) in self.positions.iter().enumerate() {
            order[p - 1] = i;
        }
        order
    }

    /// New permutation with the positions of items `i` and `j` exchanged.
    pub fn swap_items(&self, i: usize, j: usize) -> Self {
        let mut positions = self.positions.clone();
        positions.swap(i, j);
        Permutation { positions }
    }

    /// Position-reversed permutation: position `p` becomes `n + 1 - p`.
    pub fn reversed(&self) -> Self {
        let n = self.positions.len();
        Permutation {
            positions: self.positions.iter().map(|&p| n + 1 - p).collect(),
        }
    }

    /// True when every item sits at its identity position.
    pub fn is_identity(&self) -> bool {
        self.positions.iter().enumerate().all(|(i, &p)| p == i + 1)
    }
}
