//! Binary index container.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PWIX"
//! 4       4     format version (u32, currently 1)
//! 8       4     d (u32)
//! 12      4     N, shard count (u32)
//! 16      4     CRC32C of the shard table
//! 20      104·N shard table, one entry per shard:
//!                 u32 n_local, u32 degree, u32 ghost_len, u32 ghost_degree,
//!                 u32 flags (bit 0 inter-shard, bit 1 ghost, bit 2 directions),
//!                 7 × (u64 byte length, u32 CRC32C) for the sections below
//! ...           section payloads, shard by shard, in section order:
//!                 0 global ids        n_local × u32
//!                 1 vectors           n_local × d × f32
//!                 2 adjacency         n_local × degree × u32
//!                 3 inter-shard map   n_local × u32 (empty if absent)
//!                 4 ghost ids         ghost_len × u32
//!                 5 ghost adjacency   ghost_len × ghost_degree × u32
//!                 6 direction words   n_local × degree × ceil(d/32) × u32
//! ```
//!
//! The inter-shard table of shard `i` always targets shard `(i + 1) mod N`.

use std::fs;
use std::path::Path;

use ringann_core::direction::{words_for, DirectionTable};
use ringann_core::ghost::GhostIndex;
use ringann_core::graph::ProximityGraph;
use ringann_core::pipeline::{Index, ShardIndex};
use ringann_core::shard::{ring_next, InterShardTable};
use ringann_core::Dataset;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PWIX";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const SECTIONS: usize = 7;
const ENTRY_LEN: usize = 5 * 4 + SECTIONS * 12;
const SECTION_NAMES: [&str; SECTIONS] = [
    "ids",
    "vectors",
    "adjacency",
    "inter-shard",
    "ghost ids",
    "ghost adjacency",
    "directions",
];

const FLAG_INTER: u32 = 1;
const FLAG_GHOST: u32 = 2;
const FLAG_DIRECTIONS: u32 = 4;

fn u32_bytes(xs: impl IntoIterator<Item = u32>) -> Vec<u8> {
    xs.into_iter().flat_map(u32::to_le_bytes).collect()
}

fn words(bytes: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(|w| w.try_into().expect("4 bytes"))
}

fn shard_sections(s: &ShardIndex) -> [Vec<u8>; SECTIONS] {
    let n = s.data.len();
    [
        u32_bytes((0..n).map(|i| s.data.global_id(i))),
        s.data.as_slice().iter().flat_map(|x| x.to_le_bytes()).collect(),
        u32_bytes(s.graph.adjacency().iter().copied()),
        s.inter.as_ref().map_or_else(Vec::new, |t| u32_bytes(t.map.iter().copied())),
        s.ghost.as_ref().map_or_else(Vec::new, |g| u32_bytes(g.ids.iter().copied())),
        s.ghost
            .as_ref()
            .map_or_else(Vec::new, |g| u32_bytes(g.graph.adjacency().iter().copied())),
        s.directions.as_ref().map_or_else(Vec::new, |dt| u32_bytes(dt.words().iter().copied())),
    ]
}

pub fn serialize_index(index: &Index) -> Result<Vec<u8>> {
    index.validate()?;
    let n_shards = index.num_shards();
    let mut table = Vec::with_capacity(ENTRY_LEN * n_shards);
    let mut payload = Vec::new();
    for s in &index.shards {
        let flags = (u32::from(s.inter.is_some()) * FLAG_INTER) | (u32::from(s.ghost.is_some()) * FLAG_GHOST) | (u32::from(s.directions.is_some()) * FLAG_DIRECTIONS);
        let (ghost_len, ghost_degree) = s.ghost.as_ref().map_or((0, 0), |g| (g.len(), g.graph.degree()));
        for v in [s.data.len(), s.graph.degree(), ghost_len, ghost_degree] {
            table.extend((v as u32).to_le_bytes());
        }
        table.extend(flags.to_le_bytes());
        for sec in shard_sections(s) {
            table.extend((sec.len() as u64).to_le_bytes());
            table.extend(crc32c::crc32c(&sec).to_le_bytes());
            payload.extend(sec);
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + table.len() + payload.len());
    out.extend(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((index.dim() as u32).to_le_bytes());
    out.extend((n_shards as u32).to_le_bytes());
    out.extend(crc32c::crc32c(&table).to_le_bytes());
    out.extend(table);
    out.extend(payload);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if len > available {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                needed: len as u64,
                available: available as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

struct Entry {
    n: usize,
    degree: usize,
    ghost_len: usize,
    ghost_degree: usize,
    flags: u32,
    sections: [(u64, u32); SECTIONS],
}

impl Entry {
    fn expected_lengths(&self, d: usize) -> [usize; SECTIONS] {
        let has = |f: u32| self.flags & f != 0;
        [
            self.n * 4,
            self.n * d * 4,
            self.n * self.degree * 4,
            if has(FLAG_INTER) { self.n * 4 } else { 0 },
            if has(FLAG_GHOST) { self.ghost_len * 4 } else { 0 },
            if has(FLAG_GHOST) { self.ghost_len * self.ghost_degree * 4 } else { 0 },
            if has(FLAG_DIRECTIONS) { self.n * self.degree * words_for(d) * 4 } else { 0 },
        ]
    }
}

pub fn deserialize_index(bytes: &[u8]) -> Result<Index> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Corrupt("bad magic, not an index file".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let d = cur.u32()? as usize;
    let n_shards = cur.u32()? as usize;
    let table_crc = cur.u32()?;
    if d == 0 || n_shards == 0 {
        return Err(Error::Corrupt(format!("d = {d}, N = {n_shards}; both must be positive")));
    }
    let table_len = n_shards
        .checked_mul(ENTRY_LEN)
        .ok_or_else(|| Error::Corrupt("shard count overflows".into()))?;
    let table = cur.take(table_len)?;
    check_crc("shard table", table, table_crc)?;

    let mut tc = Cursor { bytes: table, pos: 0 };
    let mut entries = Vec::with_capacity(n_shards);
    for _ in 0..n_shards {
        let (n, degree, ghost_len, ghost_degree, flags) = (
            tc.u32()? as usize,
            tc.u32()? as usize,
            tc.u32()? as usize,
            tc.u32()? as usize,
            tc.u32()?,
        );
        let mut sections = [(0u64, 0u32); SECTIONS];
        for s in &mut sections {
            *s = (tc.u64()?, tc.u32()?);
        }
        entries.push(Entry {
            n,
            degree,
            ghost_len,
            ghost_degree,
            flags,
            sections,
        });
    }

    let mut shards = Vec::with_capacity(n_shards);
    for (si, e) in entries.iter().enumerate() {
        let want = e.expected_lengths(d);
        let mut raw: Vec<&[u8]> = Vec::with_capacity(SECTIONS);
        for (k, &(len, crc)) in e.sections.iter().enumerate() {
            if len != want[k] as u64 {
                return Err(Error::Corrupt(format!(
                    "shard {si} section {}: length {len}, expected {}",
                    SECTION_NAMES[k], want[k]
                )));
            }
            let body = cur.take(len as usize)?;
            check_crc(&format!("shard {si} section {}", SECTION_NAMES[k]), body, crc)?;
            raw.push(body);
        }
        shards.push(decode_shard(si, n_shards, d, e, &raw)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let index = Index { shards };
    index.validate()?;
    Ok(index)
}

fn check_crc(section: &str, body: &[u8], stored: u32) -> Result<()> {
    let computed = crc32c::crc32c(body);
    if computed != stored {
        return Err(Error::Checksum {
            section: section.into(),
            stored,
            computed,
        });
    }
    Ok(())
}

fn ids(bytes: &[u8]) -> Vec<u32> {
    words(bytes).map(u32::from_le_bytes).collect()
}

fn decode_shard(si: usize, n_shards: usize, d: usize, e: &Entry, raw: &[&[u8]]) -> Result<ShardIndex> {
    let vectors = words(raw[1]).map(f32::from_le_bytes).collect();
    let data = Dataset::new(d, vectors)?.with_ids(ids(raw[0]))?;
    let graph = ProximityGraph::from_parts(e.n, e.degree, ids(raw[2]))?;
    let inter = (e.flags & FLAG_INTER != 0).then(|| InterShardTable {
        source: si as u32,
        target: ring_next(si, n_shards) as u32,
        map: ids(raw[3]),
    });
    let ghost = if e.flags & FLAG_GHOST != 0 {
        let g = ProximityGraph::from_parts(e.ghost_len, e.ghost_degree, ids(raw[5]))?;
        let gid = ids(raw[4]);
        if gid.iter().any(|&x| x as usize >= e.n) {
            return Err(Error::Corrupt(format!("shard {si}: ghost id out of range")));
        }
        Some(GhostIndex::from_parts(&data, gid, g)?)
    } else {
        None
    };
    let directions = if e.flags & FLAG_DIRECTIONS != 0 {
        Some(DirectionTable::from_parts(e.n, e.degree, d, ids(raw[6]))?)
    } else {
        None
    };
    Ok(ShardIndex {
        data,
        graph,
        inter,
        ghost,
        directions,
    })
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<u32> {
    let path = path.as_ref();
    let bytes = serialize_index(index)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(crc32c::crc32c(&bytes))
}

/// Loads an index and returns it with the CRC32C of the whole file.
pub fn load_index(path: impl AsRef<Path>) -> Result<(Index, u32)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let index = deserialize_index(&bytes)?;
    Ok((index, crc32c::crc32c(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ringann_core::pipeline::{build_index, BuildParams, GhostBuild};
    use ringann_core::vecdata::{gen_synthetic, SyntheticSpec};

    fn index(shards: usize) -> Index {
        let ds = gen_synthetic(&SyntheticSpec { n: 400, d: 40, n_clusters: 4, spread: 0.2, seed: 3 }).unwrap();
        build_index(
            &ds,
            &BuildParams { shards, degree: 8, ghost: Some(GhostBuild { ratio: 0.2, degree: 4 }), ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_four_shards() {
        let idx = index(4);
        let bytes = serialize_index(&idx).unwrap();
        assert_eq!(deserialize_index(&bytes).unwrap(), idx);
        assert_eq!(serialize_index(&deserialize_index(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn optional_sections_may_be_absent() {
        let ds = gen_synthetic(&SyntheticSpec { n: 100, d: 3, n_clusters: 2, spread: 0.2, seed: 1 }).unwrap();
        let idx = build_index(
            &ds,
            &BuildParams { shards: 1, degree: 5, directions: false, ..Default::default() },
        )
        .unwrap();
        let back = deserialize_index(&serialize_index(&idx).unwrap()).unwrap();
        assert!(back.shards[0].ghost.is_none() && back.shards[0].directions.is_none());
        assert_eq!(back, idx);
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut bytes = serialize_index(&index(2)).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        assert!(matches!(deserialize_index(&bytes), Err(Error::Checksum { .. })));
        let mut bytes = serialize_index(&index(2)).unwrap();
        bytes[HEADER_LEN + 1] ^= 1;
        assert!(matches!(deserialize_index(&bytes), Err(Error::Checksum { .. })));
    }

    #[test]
    fn future_version_is_reported() {
        let mut bytes = serialize_index(&index(1)).unwrap();
        bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            deserialize_index(&bytes),
            Err(Error::Version { found, supported: FORMAT_VERSION }) if found == FORMAT_VERSION + 1
        ));
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = serialize_index(&index(2)).unwrap();
        for cut in [3, 10, HEADER_LEN + 5, bytes.len() - 1] {
            assert!(matches!(deserialize_index(&bytes[..cut]), Err(Error::Truncated { .. })), "cut {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(deserialize_index(&long), Err(Error::Corrupt(_))));
    }
}
