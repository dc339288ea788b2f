//! Top-k selection shared by the sparse and dense retrievers.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

struct Candidate<'a> {
    score: f64,
    id: &'a str,
    ordinal: usize,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`: higher score first, then
    /// ascending doc id.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    // Max-heap top is the worst-ranked kept candidate.
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

/// Selects the `k` best `(ordinal, score)` pairs, ordered by descending score
/// with ties broken by ascending doc id.
pub fn top_k(scores: impl IntoIterator<Item = (usize, f64)>, doc_ids: &[String], k: usize) -> Vec<(String, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
    for (ordinal, score) in scores {
        let cand = Candidate {
            // -0.0 would otherwise sort below 0.0 and print with a sign
            score: score + 0.0,
            id: &doc_ids[ordinal],
            ordinal,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank_cmp(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|c| (doc_ids[c.ordinal].clone(), c.score))
        .collect()
}
