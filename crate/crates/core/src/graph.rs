//! Fixed out-degree proximity graphs built by exact brute force.
//!
//! Each row of the adjacency table keeps the `j - j/4` exact nearest
//! neighbors of its node, then spends the remaining `j/4` slots on reverse
//! edges (closest nodes that point at it), back-filling with further exact
//! neighbors when there are not enough reverse candidates. Rows are stored
//! ascending by `(distance, id)`.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{invalid, Error, Result};
use crate::oracle::{rank_cmp, TopK};
use crate::vecdata::{l2_squared, Dataset};
use crate::LocalId;

/// Adjacency table with exactly `degree` entries per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityGraph {
    n: usize,
    degree: usize,
    adj: Vec<LocalId>,
    padded_rows: usize,
}

impl ProximityGraph {
    /// Validates and wraps a flat `n × degree` adjacency table.
    pub fn from_parts(n: usize, degree: usize, adj: Vec<LocalId>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if adj.len() != n * degree {
            return Err(invalid("adjacency", "length is not n * degree"));
        }
        let mut padded_rows = 0;
        for u in 0..n {
            let row = &adj[u * degree..(u + 1) * degree];
            if let Some(&bad) = row.iter().find(|&&v| v as usize >= n) {
                return Err(Error::InvalidNode { id: bad, len: n });
            }
            if row.contains(&(u as LocalId)) {
                return Err(invalid("adjacency", "self-loop"));
            }
            if !row_is_distinct_then_padded(row) {
                return Err(invalid("adjacency", "duplicate neighbor outside trailing padding"));
            }
            if has_padding(row) {
                padded_rows += 1;
            }
        }
        Ok(Self {
            n,
            degree,
            adj,
            padded_rows,
        })
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

    /// Rows that repeat their last neighbor to reach `degree` entries.
    pub fn padded_rows(&self) -> usize {
        self.padded_rows
    }

    #[inline]
    pub fn neighbors(&self, u: LocalId) -> &[LocalId] {
        let u = u as usize;
        &self.adj[u * self.degree..(u + 1) * self.degree]
    }

    pub fn adjacency(&self) -> &[LocalId] {
        &self.adj
    }

    /// Number of nodes reachable from `start` along directed edges.
    pub fn reachable_from(&self, start: LocalId) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        seen[start as usize] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count
    }
}

fn has_padding(row: &[LocalId]) -> bool {
    row.len() >= 2 && row[row.len() - 1] == row[row.len() - 2]
}

fn row_is_distinct_then_padded(row: &[LocalId]) -> bool {
    let Some(&last) = row.last() else {
        return true;
    };
    let mut end = row.len();
    while end >= 2 && row[end - 2] == last {
        end -= 1;
    }
    let head = &row[..end];
    head.iter()
        .enumerate()
        .all(|(i, v)| !head[..i].contains(v))
}

/// Exact neighbor lists: `(squared distance, local id)` ascending.
pub type KnnLists = Vec<Vec<(f32, LocalId)>>;

/// Number of slots per row reserved for reverse edges.
pub fn reverse_slots(degree: usize) -> usize {
    degree / 4
}

/// Exact `depth`-NN lists for the given rows, scanning all other rows.
/// Used for row-parallel builds; agrees exactly with [`knn_lists_all`].
pub fn knn_lists_rows(data: &Dataset, depth: usize, rows: Range<usize>) -> KnnLists {
    let n = data.len();
    rows.map(|u| {
        if depth == 0 {
            return Vec::new();
        }
        let mut top = TopK::new(depth);
        let ru = data.row(u);
        for v in (0..n).filter(|&v| v != u) {
            top.offer(l2_squared(ru, data.row(v)), v as LocalId);
        }
        top.into_sorted()
    })
    .collect()
}

/// Exact `depth`-NN lists for every row. Each pair distance is computed
/// once and offered to both endpoints, in cache-sized blocks.
pub fn knn_lists_all(data: &Dataset, depth: usize) -> KnnLists {
    const BLOCK: usize = 128;
    let n = data.len();
    if depth == 0 {
        return vec![Vec::new(); n];
    }
    let mut tops: Vec<TopK> = (0..n).map(|_| TopK::new(depth)).collect();
    // Worst kept distance per row (+inf until full): cheap rejection test.
    let mut worst = vec![f32::INFINITY; n];
    let offer = |tops: &mut [TopK], worst: &mut [f32], row: usize, dd: f32, id: usize| {
        if dd <= worst[row] {
            tops[row].offer(dd, id as LocalId);
            if let Some(w) = tops[row].worst_if_full() {
                worst[row] = w;
            }
        }
    };
    for bi in (0..n).step_by(BLOCK) {
        let ei = (bi + BLOCK).min(n);
        for bj in (bi..n).step_by(BLOCK) {
            let ej = (bj + BLOCK).min(n);
            for u in bi..ei {
                let ru = data.row(u);
                let start = if bj == bi { u + 1 } else { bj };
                for v in start..ej {
                    let dd = l2_squared(ru, data.row(v));
                    offer(&mut tops, &mut worst, u, dd, v);
                    offer(&mut tops, &mut worst, v, dd, u);
                }
            }
        }
    }
    tops.into_iter().map(TopK::into_sorted).collect()
}

/// Turns exact `degree`-NN lists into the final adjacency table (forward
/// edges, reverse edges, back-fill, padding).
pub fn assemble(n: usize, degree: usize, lists: &KnnLists) -> Result<ProximityGraph> {
    if lists.len() != n {
        return Err(invalid("lists", "one list per node required"));
    }
    let fwd = degree - reverse_slots(degree);
    let mut incoming: Vec<Vec<(f32, LocalId)>> = vec![Vec::new(); n];
    for (u, list) in lists.iter().enumerate() {
        for &(dd, v) in list.iter().take(fwd) {
            incoming[v as usize].push((dd, u as LocalId));
        }
    }
    let mut adj = Vec::with_capacity(n * degree);
    let mut row: Vec<(f32, LocalId)> = Vec::with_capacity(degree);
    for (v, list) in lists.iter().enumerate() {
        row.clear();
        row.extend(list.iter().take(fwd).copied());
        let inc = &mut incoming[v];
        inc.sort_by(|a, b| rank_cmp(a.0, a.1, b.0, b.1));
        for &(dd, u) in inc.iter() {
            if row.len() == degree {
                break;
            }
            if !row.iter().any(|&(_, w)| w == u) {
                row.push((dd, u));
            }
        }
        for &(dd, u) in list.iter().skip(fwd) {
            if row.len() == degree {
                break;
            }
            if !row.iter().any(|&(_, w)| w == u) {
                row.push((dd, u));
            }
        }
        row.sort_by(|a, b| rank_cmp(a.0, a.1, b.0, b.1));
        adj.extend(row.iter().map(|&(_, id)| id));
        if row.len() < degree {
            let Some(&(_, last)) = row.last() else {
                return Err(invalid("degree", "node has no neighbor candidates"));
            };
            adj.extend(core::iter::repeat_n(last, degree - row.len()));
        }
    }
    ProximityGraph::from_parts(n, degree, adj)
}

/// Exact kNN graph of out-degree `degree` with reverse-edge augmentation.
pub fn build_knn_graph(data: &Dataset, degree: usize) -> Result<ProximityGraph> {
    check_degree(data.len(), degree)?;
    assemble(data.len(), degree, &knn_lists_all(data, degree))
}

pub(crate) fn check_degree(n: usize, degree: usize) -> Result<()> {
    if degree >= n {
        return Err(invalid(
            "degree",
            alloc::format!("out-degree {degree} must be below node count {n}"),
        ));
    }
    Ok(())
}
