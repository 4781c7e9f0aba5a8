use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One search hit: entry id and squared distance to the query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor<S> {
    pub id: u64,
    pub distance: S,
}

struct Cand<S>(Neighbor<S>);

impl<S: Scalar> Ord for Cand<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        let a = self.0.distance.to_f64_lossless();
        let b = other.0.distance.to_f64_lossless();
        a.total_cmp(&b).then(self.0.id.cmp(&other.0.id))
    }
}

impl<S: Scalar> PartialOrd for Cand<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for Cand<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Cand<S> {}

/// Bounded selection of the `k` smallest `(distance, id)` pairs.
pub struct TopK<S> {
    k: usize,
    heap: BinaryHeap<Cand<S>>,
}

impl<S: Scalar> TopK<S> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: u64, distance: S) {
        let cand = Cand(Neighbor { id, distance });
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(worst) = self.heap.peek() {
            if cand < *worst {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    /// Ascending by distance, ties by ascending id.
    pub fn into_sorted(self) -> Vec<Neighbor<S>> {
        self.heap.into_sorted_vec().into_iter().map(|c| c.0).collect()
    }
}
