//! Dense `f32` datasets and the L2 distance.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::{rng, GlobalId};

/// `n` points of dimension `d`, stored row-major, each carrying a global id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    data: Vec<f32>,
    ids: Option<Vec<GlobalId>>,
}

/// Query batches have the same layout as datasets.
pub type QuerySet = Dataset;

impl Dataset {
    /// Wraps row-major `data`; ids default to row indices.
    pub fn new(d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("dimension must be at least 1".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidDataset("dataset must hold at least one point".into()));
        }
        if !data.len().is_multiple_of(d) {
            return Err(Error::InvalidDataset(format!(
                "data length {} is not a multiple of d = {d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { d, data, ids: None })
    }

    /// Attaches explicit global ids (one per row).
    pub fn with_ids(mut self, ids: Vec<GlobalId>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::InvalidDataset(format!(
                "{} ids for {} rows",
                ids.len(),
                self.len()
            )));
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn global_id(&self, i: usize) -> GlobalId {
        match &self.ids {
            Some(ids) => ids[i],
            None => i as GlobalId,
        }
    }

    pub fn explicit_ids(&self) -> Option<&[GlobalId]> {
        self.ids.as_deref()
    }

    /// Copies the listed rows (with their global ids) into a new dataset.
    pub fn gather(&self, rows: &[u32]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.d);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            let r = r as usize;
            if r >= self.len() {
                return Err(Error::InvalidNode {
                    id: r as u32,
                    len: self.len(),
                });
            }
            data.extend_from_slice(self.row(r));
            ids.push(self.global_id(r));
        }
        Self::new(self.d, data)?.with_ids(ids)
    }
}

/// Squared Euclidean distance, accumulated in eight `f32` lanes in one
/// pass. Symmetric bit-for-bit in its arguments.
#[inline]
pub fn l2_squared(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let t = x[i] - y[i];
            acc[i] += t * t;
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        let t = x - y;
        tail += t * t;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Euclidean distance between two vectors of equal dimension.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(libm::sqrtf(l2_squared(a, b)))
}

/// Parameters of the clustered synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub n_clusters: usize,
    pub spread: f32,
    pub seed: u64,
}

/// Gaussian blobs around centers drawn uniformly in `[0, 1]^d`; point `i`
/// belongs to cluster `i % n_clusters`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        n,
        d,
        n_clusters,
        spread,
        seed,
    } = *spec;
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    if n_clusters == 0 || n < n_clusters {
        return Err(invalid("n_clusters", format!("need 1 <= n_clusters <= n, got {n_clusters} for n = {n}")));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(invalid("spread", "must be positive and finite"));
    }
    let mut rng = rng::seeded(seed);
    let centers: Vec<f32> = (0..n_clusters * d).map(|_| rng.random::<f32>()).collect();
    let noise = Normal::new(0.0f32, spread).map_err(|e| invalid("spread", format!("{e}")))?;
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let c = &centers[(i % n_clusters) * d..(i % n_clusters + 1) * d];
        data.extend(c.iter().map(|&x| x + noise.sample(&mut rng)));
    }
    Dataset::new(d, data)
}

/// Cluster index of point `i` under [`gen_synthetic`]'s round-robin rule.
pub fn synthetic_cluster(i: usize, n_clusters: usize) -> usize {
    i % n_clusters
}
