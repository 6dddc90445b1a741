//! Exact brute-force k-nearest neighbors and Recall@k.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::vecdata::{l2_squared, Dataset};
use crate::GlobalId;

/// A result entry: global point id and its (non-squared) L2 distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: GlobalId,
    pub distance: f32,
}

/// Neighbors of one query, ascending by distance, ties by id.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query_id: u32,
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn ids(&self) -> impl Iterator<Item = GlobalId> + '_ {
        self.entries.iter().map(|e| e.id)
    }
}

/// Total order on `(distance, id)` used for every ranking decision.
#[inline]
pub fn rank_cmp(da: f32, ia: u32, db: f32, ib: u32) -> Ordering {
    da.total_cmp(&db).then(ia.cmp(&ib))
}

/// Bounded list keeping the `cap` smallest `(dist, id)` pairs, sorted.
#[derive(Debug, Clone)]
pub(crate) struct TopK {
    cap: usize,
    items: Vec<(f32, u32)>,
}

impl TopK {
    pub(crate) fn new(cap: usize) -> Self {
        Self {
            cap,
            items: Vec::with_capacity(cap + 1),
        }
    }

    #[inline]
    pub(crate) fn offer(&mut self, dist: f32, id: u32) {
        if self.items.len() == self.cap {
            let &(wd, wi) = self.items.last().expect("cap > 0");
            if rank_cmp(dist, id, wd, wi) != Ordering::Less {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| rank_cmp(d, i, dist, id) == Ordering::Less);
        self.items.insert(pos, (dist, id));
    }

    pub(crate) fn worst_if_full(&self) -> Option<f32> {
        (self.items.len() == self.cap).then(|| self.items[self.cap - 1].0)
    }

    pub(crate) fn into_sorted(self) -> Vec<(f32, u32)> {
        self.items
    }
}

/// The `k` points of `dataset` closest to `query`.
pub fn exact_knn(dataset: &Dataset, query: &[f32], query_id: u32, k: usize) -> Result<NeighborList> {
    if query.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: query.len(),
        });
    }
    if k == 0 || k > dataset.len() {
        return Err(Error::KOutOfRange {
            k,
            available: dataset.len(),
        });
    }
    let mut top = TopK::new(k);
    for (i, row) in dataset.rows().enumerate() {
        top.offer(l2_squared(query, row), dataset.global_id(i));
    }
    Ok(NeighborList {
        query_id,
        entries: top
            .into_sorted()
            .into_iter()
            .map(|(d, id)| Neighbor {
                id,
                distance: libm::sqrtf(d),
            })
            .collect(),
    })
}

/// `|truth[..k] ∩ result[..k]| / k`, intersecting by id.
pub fn recall_at_k(truth: &[GlobalId], result: &[GlobalId], k: usize) -> Result<f64> {
    if k == 0 || truth.len() < k || result.len() < k {
        return Err(Error::KOutOfRange {
            k,
            available: truth.len().min(result.len()),
        });
    }
    let mut t: Vec<GlobalId> = truth[..k].to_vec();
    t.sort_unstable();
    let hits = result[..k]
        .iter()
        .enumerate()
        .filter(|&(i, id)| !result[..i].contains(id) && t.binary_search(id).is_ok())
        .count();
    Ok(hits as f64 / k as f64)
}

/// [`recall_at_k`] over neighbor lists.
pub fn list_recall(truth: &NeighborList, result: &NeighborList, k: usize) -> Result<f64> {
    let t: Vec<_> = truth.ids().collect();
    let r: Vec<_> = result.ids().collect();
    recall_at_k(&t, &r, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn picks_the_two_closest_on_a_line() {
        let ds = Dataset::new(2, vec![0.0, 0.0, 1.0, 0.0, 5.0, 0.0]).unwrap();
        let nl = exact_knn(&ds, &[0.4, 0.0], 0, 2).unwrap();
        assert_eq!(nl.ids().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn k_equal_n_returns_everything_sorted() {
        let ds = Dataset::new(1, vec![4.0, -1.0, 2.0, 0.5]).unwrap();
        let nl = exact_knn(&ds, &[0.0], 0, 4).unwrap();
        assert_eq!(nl.ids().collect::<Vec<_>>(), vec![3, 1, 2, 0]);
        assert!(nl.entries.windows(2).all(|w| w[0].distance <= w[1].distance));
    }

    #[test]
    fn k_out_of_range() {
        let ds = Dataset::new(1, vec![1.0, 2.0]).unwrap();
        assert!(exact_knn(&ds, &[0.0], 0, 0).is_err());
        assert!(exact_knn(&ds, &[0.0], 0, 3).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let ds = Dataset::new(1, vec![1.0, -1.0, 1.0]).unwrap();
        let nl = exact_knn(&ds, &[0.0], 0, 2).unwrap();
        assert_eq!(nl.ids().collect::<Vec<_>>(), vec![0, 1]);
    }

    /// Independent reference: f64 distance table, then a full sort.
    fn reference_knn(ds: &Dataset, q: &[f32], k: usize) -> Vec<u32> {
        let mut all: Vec<(f64, u32)> = (0..ds.len())
            .map(|i| {
                let row = ds.row(i);
                let s: f64 = (0..q.len()).map(|t| (q[t] as f64 - row[t] as f64).powi(2)).sum();
                (s, i as u32)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        all.truncate(k);
        all.into_iter().map(|x| x.1).collect()
    }

    #[test]
    fn matches_double_loop_reference() {
        let mut r = rng::seeded(5);
        let d = 12;
        let data: Vec<f32> = (0..2000 * d).map(|_| r.random::<f32>()).collect();
        let ds = Dataset::new(d, data).unwrap();
        for qi in 0..20 {
            let q: Vec<f32> = (0..d).map(|_| r.random::<f32>()).collect();
            let got: Vec<_> = exact_knn(&ds, &q, qi, 10).unwrap().ids().collect();
            assert_eq!(got, reference_knn(&ds, &q, 10));
        }
    }

    #[test]
    fn recall_examples() {
        let a: Vec<u32> = (0..10).collect();
        let b: Vec<u32> = (10..20).collect();
        let half: Vec<u32> = (5..15).collect();
        assert_eq!(recall_at_k(&a, &a, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&a, &b, 10).unwrap(), 0.0);
        assert_eq!(recall_at_k(&a, &half, 10).unwrap(), 0.5);
        assert!(recall_at_k(&a[..5], &a, 10).is_err());
    }

    proptest! {
        #[test]
        fn recall_bounded_and_order_invariant(
            truth in proptest::collection::hash_set(0u32..40, 10),
            result in proptest::collection::hash_set(0u32..40, 10),
        ) {
            let t: Vec<u32> = truth.into_iter().collect();
            let mut r: Vec<u32> = result.into_iter().collect();
            let x = recall_at_k(&t, &r, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
            r.reverse();
            prop_assert_eq!(x, recall_at_k(&t, &r, 10).unwrap());
            prop_assert_eq!(recall_at_k(&t, &t, 10).unwrap(), 1.0);
        }
    }
}
