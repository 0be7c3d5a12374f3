//! Tensor storage, format construction and conversion, and the kernel
//! interpreter with instrumentation.

mod interp;
mod io;
mod rin_interp;

pub use interp::{interpret, InterpretOptions, RuntimeError};
pub use io::{read_tensor_text, write_tensor_text, IoError};
pub use rin_interp::{interpret_rin, RinInterpError};

use crate::frontend::{LevelFormat, StorageSpec};
use std::collections::BTreeMap;
use thiserror::Error;

/// Stand-in for infinity in min-plus problems; large enough to dominate,
/// small enough that sums of sentinels stay finite and ordered.
pub const INF_SENTINEL: f64 = 1e30;

/// Addition that saturates at the sentinel so `min(INF, INF + w)` behaves.
pub fn saturating_add(a: f64, b: f64) -> f64 {
    if a >= INF_SENTINEL || b >= INF_SENTINEL {
        INF_SENTINEL
    } else if a <= -INF_SENTINEL || b <= -INF_SENTINEL {
        -INF_SENTINEL
    } else {
        a + b
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("coordinate {coords:?} out of range for extents {extents:?}")]
    OutOfRange { coords: Vec<i64>, extents: Vec<i64> },
    #[error("duplicate coordinate {0:?}")]
    Duplicate(Vec<i64>),
    #[error("unsupported storage layout: a Compressed level must be the last level")]
    UnsupportedLayout,
    #[error("structural invariant violated: {0}")]
    Structure(String),
}

/// Dense or compressed payload. Compressed storage keeps the outer (dense)
/// levels as segment enumeration and the final level as pos/crd/vals.
#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Dense(Vec<f64>),
    Compressed { pos: Vec<i64>, crd: Vec<i64>, vals: Vec<f64> },
}

/// A tensor value with its storage description and per-dimension extents.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub spec: StorageSpec,
    pub extents: Vec<i64>,
    pub storage: Storage,
}

impl TensorData {
    pub fn rank(&self) -> usize {
        self.extents.len()
    }

    pub fn zeros(spec: StorageSpec, extents: Vec<i64>) -> Self {
        if spec.is_all_dense() {
            let n: i64 = extents.iter().product::<i64>().max(0);
            TensorData { spec, extents, storage: Storage::Dense(vec![0.0; n as usize]) }
        } else {
            let segments = Self::segment_count(&spec, &extents);
            TensorData {
                spec,
                extents,
                storage: Storage::Compressed { pos: vec![0; segments + 1], crd: Vec::new(), vals: Vec::new() },
            }
        }
    }

    pub fn filled(spec: StorageSpec, extents: Vec<i64>, value: f64) -> Self {
        let n: i64 = extents.iter().product::<i64>().max(0);
        debug_assert!(spec.is_all_dense());
        TensorData { spec, extents, storage: Storage::Dense(vec![value; n as usize]) }
    }

    fn segment_count(spec: &StorageSpec, extents: &[i64]) -> usize {
        spec.levels[..spec.levels.len() - 1]
            .iter()
            .map(|(d, _)| extents[*d].max(0) as usize)
            .product()
    }

    /// Compressed dimension (the last level's dimension), if compressed.
    pub fn compressed_dim(&self) -> Option<usize> {
        match self.storage {
            Storage::Dense(_) => None,
            Storage::Compressed { .. } => Some(self.spec.levels.last().unwrap().0),
        }
    }

    /// Row-major-in-level-order offset of logical coordinates.
    pub fn dense_offset(&self, coords: &[i64]) -> usize {
        let mut off: i64 = 0;
        for (dim, _) in &self.spec.levels {
            off = off * self.extents[*dim] + coords[*dim];
        }
        off as usize
    }

    /// Segment index of the dense prefix for compressed storage.
    pub fn segment_of(&self, coords: &[i64]) -> usize {
        let mut off: i64 = 0;
        for (dim, _) in &self.spec.levels[..self.spec.levels.len() - 1] {
            off = off * self.extents[*dim] + coords[*dim];
        }
        off as usize
    }

    fn in_range(&self, coords: &[i64]) -> bool {
        coords.len() == self.extents.len() && coords.iter().zip(&self.extents).all(|(c, e)| *c >= 0 && c < e)
    }

    /// Logical read; absent compressed entries are zero.
    pub fn get(&self, coords: &[i64]) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v[self.dense_offset(coords)],
            Storage::Compressed { pos, crd, vals } => {
                let s = self.segment_of(coords);
                let dim = self.compressed_dim().unwrap();
                let target = coords[dim];
                let (lo, hi) = (pos[s] as usize, pos[s + 1] as usize);
                match crd[lo..hi].binary_search(&target) {
                    Ok(i) => vals[lo + i],
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Logical write; only dense storage supports random writes.
    pub fn set(&mut self, coords: &[i64], value: f64) {
        let off = self.dense_offset(coords);
        match &mut self.storage {
            Storage::Dense(v) => v[off] = value,
            Storage::Compressed { .. } => panic!("random write into compressed storage"),
        }
    }

    /// All stored (coordinates, value) pairs, in level order.
    pub fn entries(&self) -> Vec<(Vec<i64>, f64)> {
        match &self.storage {
            Storage::Dense(v) => {
                let mut out = Vec::new();
                let mut coords = vec![0i64; self.rank()];
                for (i, val) in v.iter().enumerate() {
                    let mut rem = i as i64;
                    for (dim, _) in self.spec.levels.iter().rev() {
                        let e = self.extents[*dim];
                        coords[*dim] = rem % e;
                        rem /= e;
                    }
                    out.push((coords.clone(), *val));
                }
                out
            }
            Storage::Compressed { pos, crd, vals } => {
                let mut out = Vec::new();
                let prefix: Vec<usize> = self.spec.levels[..self.spec.levels.len() - 1]
                    .iter()
                    .map(|(d, _)| *d)
                    .collect();
                let cdim = self.compressed_dim().unwrap();
                for s in 0..pos.len() - 1 {
                    let mut coords = vec![0i64; self.rank()];
                    let mut rem = s as i64;
                    for dim in prefix.iter().rev() {
                        let e = self.extents[*dim];
                        coords[*dim] = rem % e;
                        rem /= e;
                    }
                    for p in pos[s] as usize..pos[s + 1] as usize {
                        coords[cdim] = crd[p];
                        out.push((coords.clone(), vals[p]));
                    }
                }
                out
            }
        }
    }

    /// Dense readback regardless of storage.
    pub fn to_dense(&self) -> TensorData {
        let mut out = TensorData::zeros(StorageSpec::dense(self.rank()), self.extents.clone());
        for (coords, v) in self.entries() {
            out.set(&coords, v);
        }
        out
    }

    /// Checks pos monotonicity, crd ordering and ranges.
    pub fn check_structure(&self) -> Result<(), TensorError> {
        if let Storage::Compressed { pos, crd, vals } = &self.storage {
            let segments = Self::segment_count(&self.spec, &self.extents);
            if pos.len() != segments + 1 {
                return Err(TensorError::Structure(format!(
                    "pos length {} != segments+1 {}",
                    pos.len(),
                    segments + 1
                )));
            }
            if pos[0] != 0 {
                return Err(TensorError::Structure("pos[0] != 0".into()));
            }
            if pos.windows(2).any(|w| w[0] > w[1]) {
                return Err(TensorError::Structure("pos not monotone".into()));
            }
            if *pos.last().unwrap() as usize != crd.len() || crd.len() != vals.len() {
                return Err(TensorError::Structure("pos end != crd/vals length".into()));
            }
            let dim = self.compressed_dim().unwrap();
            let extent = self.extents[dim];
            for s in 0..segments {
                let seg = &crd[pos[s] as usize..pos[s + 1] as usize];
                if seg.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(TensorError::Structure(format!("crd not strictly increasing in segment {s}")));
                }
                if seg.iter().any(|c| *c < 0 || *c >= extent) {
                    return Err(TensorError::Structure(format!("crd out of range in segment {s}")));
                }
            }
        }
        Ok(())
    }
}

/// Builds a tensor from coordinate-value triples.
pub fn build_from_coo(
    triples: &[(Vec<i64>, f64)],
    spec: &StorageSpec,
    extents: &[i64],
) -> Result<TensorData, TensorError> {
    if !spec.is_all_dense() {
        let (last_dim, last_fmt) = *spec.levels.last().unwrap();
        let _ = last_dim;
        if last_fmt != LevelFormat::Compressed
            || spec.levels[..spec.levels.len() - 1]
                .iter()
                .any(|(_, f)| *f == LevelFormat::Compressed)
        {
            return Err(TensorError::UnsupportedLayout);
        }
    }
    let mut data = TensorData::zeros(spec.clone(), extents.to_vec());
    for (coords, _) in triples {
        if !data.in_range(coords) {
            return Err(TensorError::OutOfRange { coords: coords.clone(), extents: extents.to_vec() });
        }
    }
    match &mut data.storage {
        Storage::Dense(_) => {
            let mut seen = std::collections::BTreeSet::new();
            for (coords, v) in triples {
                if !seen.insert(coords.clone()) {
                    return Err(TensorError::Duplicate(coords.clone()));
                }
                data.set(coords, *v);
            }
        }
        Storage::Compressed { .. } => {
            // Sort by (segment, coordinate) and build pos/crd/vals.
            let mut keyed: Vec<(usize, i64, f64)> = triples
                .iter()
                .map(|(coords, v)| {
                    let s = data.segment_of(coords);
                    let dim = data.compressed_dim().unwrap();
                    (s, coords[dim], *v)
                })
                .collect();
            keyed.sort_by_key(|(s, c, _)| (*s, *c));
            if let Some(w) = keyed.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
                return Err(TensorError::Duplicate(vec![w[0].0 as i64, w[0].1]));
            }
            let segments = TensorData::segment_count(spec, extents);
            let mut pos = vec![0i64; segments + 1];
            let mut crd = Vec::with_capacity(keyed.len());
            let mut vals = Vec::with_capacity(keyed.len());
            for (s, c, v) in keyed {
                pos[s + 1] += 1;
                crd.push(c);
                vals.push(v);
            }
            for s in 0..segments {
                pos[s + 1] += pos[s];
            }
            data.storage = Storage::Compressed { pos, crd, vals };
        }
    }
    data.check_structure()?;
    Ok(data)
}

/// Value-preserving re-layout. Stored entries survive conversion between
/// compressed formats (including explicit zeros); densifying from a dense
/// source drops nothing, while compressing a dense source keeps only
/// nonzeros.
pub fn convert(data: &TensorData, target: &StorageSpec) -> Result<TensorData, TensorError> {
    let entries = data.entries();
    let filtered: Vec<(Vec<i64>, f64)> = if target.is_all_dense() || !data.spec.is_all_dense() {
        entries
    } else {
        entries.into_iter().filter(|(_, v)| *v != 0.0).collect()
    };
    build_from_coo(&filtered, target, &data.extents)
}

/// Instrumentation counters for one interpreted run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub loads: BTreeMap<String, u64>,
    pub stores: BTreeMap<String, u64>,
    pub searches: u64,
    pub seed: Option<u64>,
}

impl ExecutionTrace {
    pub fn loads_of(&self, tensor: &str) -> u64 {
        self.loads.get(tensor).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::LevelFormat;

    fn csr() -> StorageSpec {
        StorageSpec {
            levels: vec![(0, LevelFormat::Dense), (1, LevelFormat::Compressed)],
            masks: Vec::new(),
        }
    }

    fn csc() -> StorageSpec {
        StorageSpec {
            levels: vec![(1, LevelFormat::Dense), (0, LevelFormat::Compressed)],
            masks: Vec::new(),
        }
    }

    #[test]
    fn coo_to_csr() {
        let triples = vec![(vec![0, 0], 2.0), (vec![1, 0], 1.0), (vec![1, 1], 4.0)];
        let t = build_from_coo(&triples, &csr(), &[2, 2]).unwrap();
        match &t.storage {
            Storage::Compressed { pos, crd, vals } => {
                assert_eq!(pos, &[0, 1, 3]);
                assert_eq!(crd, &[0, 0, 1]);
                assert_eq!(vals, &[2.0, 1.0, 4.0]);
            }
            _ => panic!("expected compressed"),
        }
        assert_eq!(t.get(&[1, 0]), 1.0);
        assert_eq!(t.get(&[0, 1]), 0.0);
    }

    #[test]
    fn empty_triples() {
        let t = build_from_coo(&[], &csr(), &[3, 3]).unwrap();
        match &t.storage {
            Storage::Compressed { pos, crd, vals } => {
                assert_eq!(pos, &[0, 0, 0, 0]);
                assert!(crd.is_empty() && vals.is_empty());
            }
            _ => panic!(),
        }
    }

    #[test]
    fn fully_dense_pattern() {
        let triples: Vec<(Vec<i64>, f64)> =
            (0..2).flat_map(|i| (0..2).map(move |j| (vec![i, j], 1.0 + (2 * i + j) as f64))).collect();
        let t = build_from_coo(&triples, &csr(), &[2, 2]).unwrap();
        match &t.storage {
            Storage::Compressed { crd, .. } => assert_eq!(crd, &[0, 1, 0, 1]),
            _ => panic!(),
        }
    }

    #[test]
    fn duplicate_rejected() {
        let triples = vec![(vec![0, 0], 1.0), (vec![0, 0], 2.0)];
        assert!(matches!(build_from_coo(&triples, &csr(), &[2, 2]), Err(TensorError::Duplicate(_))));
    }

    #[test]
    fn out_of_range_rejected() {
        let triples = vec![(vec![2, 0], 1.0)];
        assert!(matches!(
            build_from_coo(&triples, &csr(), &[2, 2]),
            Err(TensorError::OutOfRange { .. })
        ));
    }

    #[test]
    fn csr_csc_round_trip() {
        let triples = vec![(vec![0, 1], 3.0), (vec![1, 0], 1.0), (vec![1, 1], 0.0), (vec![2, 2], 5.0)];
        let a = build_from_coo(&triples, &csr(), &[3, 3]).unwrap();
        let b = convert(&a, &csc()).unwrap();
        let c = convert(&b, &csr()).unwrap();
        assert_eq!(a, c, "round trip preserves pos/crd/vals, including stored zeros");
    }

    #[test]
    fn dense_to_csr_drops_zeros() {
        let dense = {
            let mut t = TensorData::zeros(StorageSpec::dense(2), vec![2, 2]);
            t.set(&[0, 0], 1.0);
            t.set(&[1, 1], 0.0);
            t
        };
        let sparse = convert(&dense, &csr()).unwrap();
        match &sparse.storage {
            Storage::Compressed { vals, .. } => assert_eq!(vals.len(), 1),
            _ => panic!(),
        }
        let back = sparse.to_dense();
        assert_eq!(back.get(&[0, 0]), 1.0);
        assert_eq!(back.get(&[1, 1]), 0.0);
    }

    #[test]
    fn row_and_column_walks_agree() {
        let triples = vec![(vec![0, 1], 3.0), (vec![1, 0], 1.0), (vec![2, 1], 5.0)];
        let a = build_from_coo(&triples, &csr(), &[3, 3]).unwrap();
        let b = convert(&a, &csc()).unwrap();
        let mut ea: Vec<(Vec<i64>, f64)> = a.entries();
        let mut eb: Vec<(Vec<i64>, f64)> = b.entries();
        ea.sort_by(|x, y| x.0.cmp(&y.0));
        eb.sort_by(|x, y| x.0.cmp(&y.0));
        assert_eq!(ea, eb);
    }
}
