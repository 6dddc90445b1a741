//! Sign-bit direction vectors and direction-guided neighbor selection.
//!
//! Bit `t` of a direction vector lives in word `t / 32` at bit position
//! `t % 32`. A component difference of exactly zero maps to bit 1. Bits at
//! positions `>= d` in the last word are always zero.

use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{invalid, Error, Result};
use crate::graph::ProximityGraph;
use crate::rng::Rng;
use crate::vecdata::Dataset;
use crate::{ceil_tolerant, LocalId};

/// Number of 32-bit words holding `d` sign bits.
#[inline]
pub fn words_for(d: usize) -> usize {
    d.div_ceil(32)
}

/// Packs `to[t] - from[t] >= 0` into `out`.
#[inline]
pub fn pack_signs(from: &[f32], to: &[f32], out: &mut [u32]) {
    debug_assert_eq!(out.len(), words_for(from.len()));
    out.fill(0);
    for (t, (a, b)) in from.iter().zip(to).enumerate() {
        if b - a >= 0.0 {
            out[t / 32] |= 1 << (t % 32);
        }
    }
}

/// Direction from the visiting node toward the query.
pub fn query_direction_bits(query: &[f32], visiting: &[f32]) -> Result<Vec<u32>> {
    if query.len() != visiting.len() {
        return Err(Error::DimensionMismatch {
            expected: visiting.len(),
            got: query.len(),
        });
    }
    let mut out = alloc::vec![0; words_for(query.len())];
    pack_signs(visiting, query, &mut out);
    Ok(out)
}

/// `d - popcount(a ^ b)`; both operands must have zeroed padding.
#[inline]
pub fn matching_count(a: &[u32], b: &[u32], d: usize) -> u32 {
    let diff: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    d as u32 - diff
}

/// Packed edge directions for every `(u -> v)` edge of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTable {
    n: usize,
    degree: usize,
    dim: usize,
    words: Vec<u32>,
}

impl DirectionTable {
    pub fn from_parts(n: usize, degree: usize, dim: usize, words: Vec<u32>) -> Result<Self> {
        let w = words_for(dim);
        if words.len() != n * degree * w {
            return Err(invalid("direction table", "length is not n * degree * words"));
        }
        if !dim.is_multiple_of(32) && w > 0 {
            let pad_mask = !0u32 << (dim % 32);
            if words.chunks_exact(w).any(|e| e[w - 1] & pad_mask != 0) {
                return Err(invalid("direction table", "padding bits set"));
            }
        }
        Ok(Self { n, degree, dim, words })
    }

    pub fn words_per_edge(&self) -> usize {
        words_for(self.dim)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All `degree` packed vectors of node `u`, back to back.
    #[inline]
    pub fn row(&self, u: LocalId) -> &[u32] {
        let stride = self.degree * self.words_per_edge();
        &self.words[u as usize * stride..(u as usize + 1) * stride]
    }

    pub fn edge(&self, u: LocalId, slot: usize) -> &[u32] {
        let w = self.words_per_edge();
        &self.row(u)[slot * w..(slot + 1) * w]
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }
}

/// Packs the direction rows for `rows` (used for row-parallel builds).
pub fn direction_rows(data: &Dataset, graph: &ProximityGraph, rows: core::ops::Range<usize>) -> Vec<u32> {
    let w = words_for(data.dim());
    let mut out = alloc::vec![0u32; rows.len() * graph.degree() * w];
    let mut chunks = out.chunks_exact_mut(w);
    for u in rows {
        for &v in graph.neighbors(u as LocalId) {
            pack_signs(data.row(u), data.row(v as usize), chunks.next().expect("sized above"));
        }
    }
    out
}

/// Direction table over every edge of `graph`.
pub fn build_direction_table(data: &Dataset, graph: &ProximityGraph) -> Result<DirectionTable> {
    if data.len() != graph.len() {
        return Err(Error::ShardMismatch(alloc::format!(
            "graph has {} nodes, data has {}",
            graph.len(),
            data.len()
        )));
    }
    let words = direction_rows(data, graph, 0..data.len());
    DirectionTable::from_parts(data.len(), graph.degree(), data.dim(), words)
}

/// Neighbors kept per parent at a given discard ratio (never below one).
pub fn keep_count(degree: usize, discard_ratio: f64) -> usize {
    let keep = libm::round((1.0 - discard_ratio) * degree as f64) as usize;
    keep.clamp(1.min(degree), degree)
}

/// Slots of the `n_keep` best-aligned neighbors, descending by matching
/// count, ties by lower slot. `row` is the parent's direction-table row.
pub fn select_neighbors(query_bits: &[u32], row: &[u32], degree: usize, d: usize, discard_ratio: f64) -> Vec<usize> {
    let w = query_bits.len();
    let mut scored: Vec<(u32, usize)> = (0..degree)
        .map(|s| (matching_count(query_bits, &row[s * w..(s + 1) * w], d), s))
        .collect();
    scored.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(keep_count(degree, discard_ratio));
    scored.into_iter().map(|(_, s)| s).collect()
}

/// Uniform random subset of `n_keep` slots (the comparison arm), in
/// ascending slot order.
pub fn select_random(rng: &mut Rng, degree: usize, discard_ratio: f64) -> Vec<usize> {
    let mut slots = index::sample(rng, degree, keep_count(degree, discard_ratio)).into_vec();
    slots.sort_unstable();
    slots
}

/// Whether 0-based `iteration` falls in the full-expansion tail of a
/// `max_iter` budget.
pub fn in_cooldown(iteration: usize, max_iter: usize, cooldown_ratio: f64) -> bool {
    iteration >= ceil_tolerant((1.0 - cooldown_ratio) * max_iter as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_knn_graph;
    use crate::rng;
    use crate::vecdata::{gen_synthetic, SyntheticSpec};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn unpack(words: &[u32], d: usize) -> Vec<bool> {
        (0..d).map(|t| words[t / 32] >> (t % 32) & 1 == 1).collect()
    }

    #[test]
    fn edge_direction_example() {
        let mut w = [0u32];
        pack_signs(&[1.0, 2.0], &[3.0, 1.0], &mut w);
        assert_eq!(w, [0x0000_0001]);
    }

    #[test]
    fn zero_difference_is_one() {
        let v = [0.5f32; 40];
        let bits = query_direction_bits(&v, &v).unwrap();
        assert_eq!(bits, vec![u32::MAX, 0xFF]);
    }

    #[test]
    fn query_direction_example() {
        assert_eq!(query_direction_bits(&[2.0, 0.0], &[1.0, 2.0]).unwrap(), vec![1]);
    }

    #[test]
    fn random_unpack_matches_comparisons() {
        let mut r = rng::seeded(4);
        for &d in &[70usize, 100] {
            let q: Vec<f32> = (0..d).map(|_| r.random::<f32>() - 0.5).collect();
            let v: Vec<f32> = (0..d).map(|_| r.random::<f32>() - 0.5).collect();
            let bits = query_direction_bits(&q, &v).unwrap();
            assert_eq!(bits.len(), words_for(d));
            let want: Vec<bool> = (0..d).map(|t| q[t] - v[t] >= 0.0).collect();
            assert_eq!(unpack(&bits, d), want);
            assert_eq!(bits[bits.len() - 1] >> (d % 32), 0);
        }
    }

    #[test]
    fn matching_count_extremes() {
        let d = 70;
        let a = vec![0xDEAD_BEEF, 0x1234_5678, 0x2A];
        assert_eq!(matching_count(&a, &a, d), 70);
        let mask = [u32::MAX, u32::MAX, (1u32 << 6) - 1];
        let c: Vec<u32> = a.iter().zip(mask).map(|(x, m)| !x & m).collect();
        assert_eq!(matching_count(&a, &c, d), 0);
    }

    #[test]
    fn matching_count_matches_bit_loop() {
        let mut r = rng::seeded(6);
        let d = 70;
        for _ in 0..200 {
            let mut a = vec![r.random::<u32>(), r.random::<u32>(), r.random::<u32>()];
            let mut b = vec![r.random::<u32>(), r.random::<u32>(), r.random::<u32>()];
            a[2] &= 0x3F;
            b[2] &= 0x3F;
            let (ua, ub) = (unpack(&a, d), unpack(&b, d));
            let want = (0..d).filter(|&t| ua[t] == ub[t]).count() as u32;
            assert_eq!(matching_count(&a, &b, d), want);
        }
    }

    #[test]
    fn table_rebuild_matches_raw_vectors() {
        let ds = gen_synthetic(&SyntheticSpec { n: 300, d: 70, n_clusters: 3, spread: 0.2, seed: 1 }).unwrap();
        let g = build_knn_graph(&ds, 8).unwrap();
        let t = build_direction_table(&ds, &g).unwrap();
        assert_eq!(t.words_per_edge(), 3);
        for u in 0..300u32 {
            for (slot, &v) in g.neighbors(u).iter().enumerate() {
                let want: Vec<bool> = (0..70)
                    .map(|i| ds.row(v as usize)[i] - ds.row(u as usize)[i] >= 0.0)
                    .collect();
                assert_eq!(unpack(t.edge(u, slot), 70), want);
            }
        }
    }

    #[test]
    fn keep_counts() {
        assert_eq!(keep_count(32, 0.0), 32);
        assert_eq!(keep_count(32, 0.5), 16);
        assert_eq!(keep_count(4, 0.99), 1);
        assert_eq!(keep_count(0, 0.5), 0);
    }

    #[test]
    fn selection_without_discard_sorts_all_slots() {
        // Four neighbors, d = 4: slot k agrees with the query on 4 - k bits.
        let q = vec![0b1111u32];
        let row = vec![0b1000u32, 0b1111, 0b0000, 0b1100];
        assert_eq!(select_neighbors(&q, &row, 4, 4, 0.0), vec![1, 3, 0, 2]);
    }

    #[test]
    fn two_aligned_neighbors_win() {
        // Visiting node at the origin, query up and to the right; two of
        // five neighbors head the same way.
        let parent = [0.0f32, 0.0];
        let query = [3.0f32, 2.0];
        let nbrs = [[-1.0f32, -1.0], [1.0, 1.5], [-2.0, 0.5], [2.0, 0.5], [0.5, -2.0]];
        let mut row = vec![0u32; nbrs.len()];
        for (s, v) in nbrs.iter().enumerate() {
            pack_signs(&parent, v, &mut row[s..s + 1]);
        }
        let qb = query_direction_bits(&query, &parent).unwrap();
        let picked = select_neighbors(&qb, &row, 5, 2, 0.6);
        assert_eq!(picked, vec![1, 3]);
    }

    #[test]
    fn cooldown_boundaries() {
        assert!((0..10).all(|i| in_cooldown(i, 10, 1.0)));
        assert!((0..10).all(|i| !in_cooldown(i, 10, 0.0)));
        let tail: Vec<usize> = (0..10).filter(|&i| in_cooldown(i, 10, 0.3)).collect();
        assert_eq!(tail, vec![7, 8, 9]);
    }

    #[test]
    fn random_selection_is_a_subset() {
        let mut r = rng::seeded(1);
        let s = select_random(&mut r, 32, 0.5);
        assert_eq!(s.len(), 16);
        assert!(s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&x| x < 32));
    }

    proptest! {
        #[test]
        fn selection_matches_full_sort_and_nests(
            q in any::<u32>(),
            row in proptest::collection::vec(any::<u32>(), 12),
            r1 in 0.0f64..0.95,
            r2 in 0.0f64..0.95,
        ) {
            let d = 32;
            let counts: Vec<u32> = row.iter().map(|&e| (!(q ^ e)).count_ones()).collect();
            let mut full: Vec<usize> = (0..12).collect();
            full.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let wide = select_neighbors(&[q], &row, 12, d, lo);
            let narrow = select_neighbors(&[q], &row, 12, d, hi);
            prop_assert_eq!(&wide[..], &full[..wide.len()]);
            prop_assert!(narrow.iter().all(|s| wide.contains(s)));
            let all = select_neighbors(&[q], &row, 12, d, 0.0);
            prop_assert_eq!(all, full);
        }

        #[test]
        fn matching_plus_mismatch_is_d(a in any::<u64>(), b in any::<u64>(), d in 1usize..64) {
            let mask = if d == 64 { u64::MAX } else { (1u64 << d) - 1 };
            let (a, b) = (a & mask, b & mask);
            let aw = [a as u32, (a >> 32) as u32];
            let bw = [b as u32, (b >> 32) as u32];
            prop_assert_eq!(matching_count(&aw, &bw, d) + (a ^ b).count_ones(), d as u32);
        }
    }
}
