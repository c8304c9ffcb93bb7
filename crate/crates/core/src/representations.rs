//! Frozen per-node encoder activations and the candidate features built from them.
//!
//! Binary cache layout (all integers little-endian `u32`):
//!
//! ```text
//! magic            8 bytes   "TSPACT01"
//! version          u32       1
//! instance_count   u32
//! dim              u32       d
//! layer_name_len   u32
//! layer_name       bytes     UTF-8
//! repeated instance_count times:
//!   id_len         u32
//!   id             bytes     UTF-8
//!   n              u32
//!   values         n*d f32   row-major, row i = node i
//! ```
//!
//! A sidecar `<file>.manifest.json` records `dataset_ref`, `layer_name`, `d`,
//! `instance_count` and the SHA-256 of the binary file.
//!
//! Values are stored as `f32` and widened to `f64` on load. A 3000-instance,
//! n = 100, d = 128 cache is 3000 * 100 * 128 * 4 B = 153.6 MB on disk and
//! twice that in memory.

use crate::error::{Error, Result};
use crate::features::CandidateFeatures;
use crate::instances::Instance;
use crate::io::{dataset_checksum, sha256_hex};
use crate::solver::tour_edges;
use crate::Task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

pub const CACHE_MAGIC: &[u8; 8] = b"TSPACT01";
pub const CACHE_VERSION: u32 = 1;
pub const RANDOM_CONTROL_LAYER: &str = "control.random";

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationBlock {
    pub instance_id: String,
    pub n: usize,
    /// `n * dim` values, row-major.
    pub values: Vec<f64>,
}

impl ActivationBlock {
    pub fn row(&self, node: usize, dim: usize) -> &[f64] {
        &self.values[node * dim..(node + 1) * dim]
    }
}

#[derive(Clone, Debug)]
pub struct ActivationCache {
    pub dataset_ref: String,
    pub layer_name: String,
    dim: usize,
    blocks: Vec<ActivationBlock>,
    index: HashMap<String, usize>,
}

impl PartialEq for ActivationCache {
    fn eq(&self, other: &Self) -> bool {
        self.dataset_ref == other.dataset_ref
            && self.layer_name == other.layer_name
            && self.dim == other.dim
            && self.blocks == other.blocks
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub dataset_ref: String,
    pub layer_name: String,
    pub d: usize,
    pub instance_count: usize,
    pub checksum: String,
}

impl ActivationCache {
    pub fn new(dataset_ref: impl Into<String>, layer_name: impl Into<String>, dim: usize, blocks: Vec<ActivationBlock>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("activation dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(blocks.len());
        for (i, b) in blocks.iter().enumerate() {
            if b.values.len() != b.n * dim {
                return Err(Error::Format(format!(
                    "block '{}' has {} values, expected n*d = {}",
                    b.instance_id,
                    b.values.len(),
                    b.n * dim
                )));
            }
            if b.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("block '{}' contains non-finite values", b.instance_id)));
            }
            if index.insert(b.instance_id.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate block '{}'", b.instance_id)));
            }
        }
        Ok(ActivationCache {
            dataset_ref: dataset_ref.into(),
            layer_name: layer_name.into(),
            dim,
            blocks,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[ActivationBlock] {
        &self.blocks
    }

    pub fn block(&self, instance_id: &str) -> Option<&ActivationBlock> {
        self.index.get(instance_id).map(|&i| &self.blocks[i])
    }

    /// Every dataset instance needs a block with matching `n`, and every block
    /// must belong to the dataset.
    pub fn check_alignment(&self, dataset: &[Instance]) -> Result<()> {
        for inst in dataset {
            match self.block(inst.id()) {
                None => return Err(Error::Alignment(format!("no activations for instance '{}'", inst.id()))),
                Some(b) if b.n != inst.n() => {
                    return Err(Error::Alignment(format!(
                        "instance '{}' has {} nodes but its activation block has {} rows",
                        inst.id(),
                        inst.n(),
                        b.n
                    )))
                }
                Some(_) => {}
            }
        }
        let ids: HashSet<&str> = dataset.iter().map(Instance::id).collect();
        if let Some(b) = self.blocks.iter().find(|b| !ids.contains(b.instance_id.as_str())) {
            return Err(Error::Alignment(format!("activation block '{}' is not in the dataset", b.instance_id)));
        }
        Ok(())
    }

    fn encode(&self) -> Vec<u8> {
        let body: usize = self.blocks.iter().map(|b| 8 + b.instance_id.len() + 4 * b.values.len()).sum();
        let mut buf = Vec::with_capacity(24 + self.layer_name.len() + body);
        buf.extend_from_slice(CACHE_MAGIC);
        for v in [CACHE_VERSION, self.blocks.len() as u32, self.dim as u32, self.layer_name.len() as u32] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(self.layer_name.as_bytes());
        for b in &self.blocks {
            buf.extend_from_slice(&(b.instance_id.len() as u32).to_le_bytes());
            buf.extend_from_slice(b.instance_id.as_bytes());
            buf.extend_from_slice(&(b.n as u32).to_le_bytes());
            for &v in &b.values {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        buf
    }

    fn decode(bytes: &[u8], dataset_ref: String) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::Format("bad magic: not an activation cache".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let name_len = r.u32()? as usize;
        let layer_name = r.string(name_len)?;
        let mut blocks = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = r.u32()? as usize;
            let instance_id = r.string(id_len)?;
            let n = r.u32()? as usize;
            let raw = r.take(n.checked_mul(dim).and_then(|x| x.checked_mul(4)).ok_or_else(|| Error::Format("block size overflows".into()))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            blocks.push(ActivationBlock { instance_id, n, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after last block", bytes.len() - r.pos)));
        }
        ActivationCache::new(dataset_ref, layer_name, dim, blocks)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated cache: need {len} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in cache".into()))
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

/// Writes the binary cache and its sidecar manifest. Values are narrowed to `f32`.
pub fn write_activation_cache(cache: &ActivationCache, path: &Path) -> Result<CacheManifest> {
    let bytes = cache.encode();
    std::fs::write(path, &bytes)?;
    let manifest = CacheManifest {
        dataset_ref: cache.dataset_ref.clone(),
        layer_name: cache.layer_name.clone(),
        d: cache.dim,
        instance_count: cache.blocks.len(),
        checksum: sha256_hex(&bytes),
    };
    std::fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads and validates a cache. The sidecar manifest is optional (external
/// exporters may not write one); when present it must agree with the file.
pub fn read_activation_cache(path: &Path) -> Result<ActivationCache> {
    let bytes = std::fs::read(path)?;
    let mpath = manifest_path(path);
    let manifest: Option<CacheManifest> = if mpath.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(&mpath)?)?)
    } else {
        None
    };
    if let Some(m) = &manifest {
        let sum = sha256_hex(&bytes);
        if m.checksum != sum {
            return Err(Error::Checksum(format!("{} does not match its manifest", path.display())));
        }
    }
    let cache = ActivationCache::decode(&bytes, manifest.as_ref().map(|m| m.dataset_ref.clone()).unwrap_or_default())?;
    if let Some(m) = &manifest {
        if m.layer_name != cache.layer_name || m.d != cache.dim || m.instance_count != cache.blocks.len() {
            return Err(Error::Format(format!("{}: header disagrees with manifest", path.display())));
        }
    }
    Ok(cache)
}

/// Reads a cache and checks it against the dataset it claims to describe.
pub fn read_activation_cache_for(path: &Path, dataset: &[Instance]) -> Result<ActivationCache> {
    let cache = read_activation_cache(path)?;
    cache.check_alignment(dataset)?;
    Ok(cache)
}

/// i.i.d. standard-normal embeddings, rounded through `f32` so they survive a
/// write/read cycle bit for bit. Stand-in for a randomly initialised encoder
/// when no external export is available.
pub fn synth_random_embeddings(dataset: &[Instance], dim: usize, seed: u64) -> Result<ActivationCache> {
    if dim == 0 {
        return Err(Error::Invalid("embedding dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = dataset
        .iter()
        .map(|inst| ActivationBlock {
            instance_id: inst.id().to_string(),
            n: inst.n(),
            values: (0..inst.n() * dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32 as f64)
                .collect(),
        })
        .collect();
    ActivationCache::new(dataset_checksum(dataset), RANDOM_CONTROL_LAYER, dim, blocks)
}

/// Node task: row `i` is `h_i`. Forbid task: row `t` is `[h_u, h_v, |h_u - h_v|]`
/// for tour edge `(u, v) = (tour[t], tour[t+1])`.
pub fn build_candidate_features(
    cache: &ActivationCache,
    inst: &Instance,
    task: Task,
    base_tour: Option<&[usize]>,
) -> Result<CandidateFeatures> {
    let block = cache
        .block(inst.id())
        .ok_or_else(|| Error::Alignment(format!("no activations for instance '{}'", inst.id())))?;
    if block.n != inst.n() {
        return Err(Error::Alignment(format!(
            "instance '{}' has {} nodes, activation block has {}",
            inst.id(),
            inst.n(),
            block.n
        )));
    }
    features_from_rows(block, cache.dim, task, base_tour)
}

/// Same as [`build_candidate_features`] for a node subset: `nodes[k]` is the
/// block row used for local node `k`, and `base_tour` uses local indices.
pub fn build_candidate_features_subset(
    cache: &ActivationCache,
    instance_id: &str,
    nodes: &[usize],
    task: Task,
    base_tour: Option<&[usize]>,
) -> Result<CandidateFeatures> {
    let block = cache
        .block(instance_id)
        .ok_or_else(|| Error::Alignment(format!("no activations for instance '{instance_id}'")))?;
    if let Some(&bad) = nodes.iter().find(|&&i| i >= block.n) {
        return Err(Error::Alignment(format!("node {bad} outside activation block of '{instance_id}'")));
    }
    let dim = cache.dim;
    let values = nodes.iter().flat_map(|&i| block.row(i, dim).iter().copied()).collect();
    let sub = ActivationBlock { instance_id: instance_id.to_string(), n: nodes.len(), values };
    features_from_rows(&sub, dim, task, base_tour)
}

fn features_from_rows(block: &ActivationBlock, dim: usize, task: Task, base_tour: Option<&[usize]>) -> Result<CandidateFeatures> {
    match task {
        Task::Removal => CandidateFeatures::new(task, dim, block.values.clone()),
        Task::Forbid => {
            let tour = base_tour.ok_or_else(|| Error::Invalid("edge features need the base tour".into()))?;
            crate::instances::check_permutation(tour, block.n)
                .map_err(|_| Error::InvalidTour(format!("base tour is not a permutation of 0..{}", block.n)))?;
            let mut data = Vec::with_capacity(tour.len() * 3 * dim);
            for (u, v) in tour_edges(tour) {
                let (hu, hv) = (block.row(u, dim), block.row(v, dim));
                data.extend_from_slice(hu);
                data.extend_from_slice(hv);
                data.extend(hu.iter().zip(hv).map(|(a, b)| (a - b).abs()));
            }
            CandidateFeatures::new(task, 3 * dim, data)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_instance, make_instance};

    fn dataset(k: u64) -> Vec<Instance> {
        (0..k).map(|s| generate_instance(5 + s as usize % 3, s).unwrap()).collect()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acts.bin");
        let data = dataset(6);
        let cache = synth_random_embeddings(&data, 4, 9).unwrap();
        let manifest = write_activation_cache(&cache, &path).unwrap();
        assert_eq!(manifest.instance_count, 6);
        let back = read_activation_cache_for(&path, &data).unwrap();
        assert_eq!(back, cache);
        for (a, b) in back.blocks().iter().zip(cache.blocks()) {
            assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn empty_cache_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        let cache = ActivationCache::new("none", "encoder_output", 8, vec![]).unwrap();
        write_activation_cache(&cache, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24 + "encoder_output".len() as u64);
        assert_eq!(read_activation_cache(&path).unwrap(), cache);
    }

    #[test]
    fn layers_are_distinguished_by_header() {
        let dir = tempfile::tempdir().unwrap();
        let data = dataset(2);
        let mut a = synth_random_embeddings(&data, 3, 1).unwrap();
        a.layer_name = "encoder_layer_0".into();
        let mut b = synth_random_embeddings(&data, 3, 2).unwrap();
        b.layer_name = "encoder_output".into();
        write_activation_cache(&a, &dir.path().join("l0.bin")).unwrap();
        write_activation_cache(&b, &dir.path().join("out.bin")).unwrap();
        assert_eq!(read_activation_cache(&dir.path().join("l0.bin")).unwrap().layer_name, "encoder_layer_0");
        assert_eq!(read_activation_cache(&dir.path().join("out.bin")).unwrap().layer_name, "encoder_output");
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acts.bin");
        let cache = synth_random_embeddings(&dataset(3), 4, 0).unwrap();
        write_activation_cache(&cache, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::remove_file(manifest_path(&path)).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_activation_cache(&path), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(read_activation_cache(&path).unwrap_err().to_string().contains("magic"));

        let mut bad = bytes.clone();
        bad[8] = 2;
        std::fs::write(&path, &bad).unwrap();
        assert!(read_activation_cache(&path).unwrap_err().to_string().contains("version"));

        // a NaN in the payload
        let mut bad = bytes.clone();
        let last = bad.len() - 4;
        bad[last..].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(read_activation_cache(&path).is_err());
    }

    #[test]
    fn manifest_checksum_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acts.bin");
        let cache = synth_random_embeddings(&dataset(2), 2, 0).unwrap();
        write_activation_cache(&cache, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_activation_cache(&path), Err(Error::Checksum(_))));
    }

    #[test]
    fn alignment_errors_name_the_instance() {
        let data = dataset(3);
        let cache = synth_random_embeddings(&data[..2], 2, 0).unwrap();
        let err = cache.check_alignment(&data).unwrap_err();
        assert!(err.to_string().contains(data[2].id()));
        let other = vec![generate_instance(9, 0).unwrap()];
        assert!(synth_random_embeddings(&other, 2, 0).unwrap().check_alignment(&data[..1]).is_err());
        let relabeled = make_instance(vec![[0.1, 0.1]; 6], data[0].id()).unwrap();
        let err = cache.check_alignment(&[relabeled]).unwrap_err();
        assert!(err.to_string().contains("rows"));
    }

    #[test]
    fn random_embeddings_are_centered_and_deterministic() {
        let data: Vec<_> = (0..100).map(|s| generate_instance(10, s).unwrap()).collect();
        let a = synth_random_embeddings(&data, 100, 3).unwrap();
        assert_eq!(a, synth_random_embeddings(&data, 100, 3).unwrap());
        assert_eq!(a.layer_name, RANDOM_CONTROL_LAYER);
        let all: Vec<f64> = a.blocks().iter().flat_map(|b| b.values.iter().copied()).collect();
        assert!(all.len() >= 100_000);
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn edge_features_follow_definition() {
        let inst = make_instance(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "sq").unwrap();
        let block = ActivationBlock {
            instance_id: "sq".into(),
            n: 4,
            values: vec![1.0, 2.0, 3.0, 1.0, 3.0, 1.0, 0.0, 0.0],
        };
        let cache = ActivationCache::new("ref", "encoder_output", 2, vec![block]).unwrap();
        let f = build_candidate_features(&cache, &inst, Task::Forbid, Some(&[0, 1, 2, 3])).unwrap();
        assert_eq!(f.dim(), 6);
        assert_eq!(f.row(0), &[1.0, 2.0, 3.0, 1.0, 2.0, 1.0]);
        // nodes 1 and 2 share an embedding: the difference block vanishes
        assert_eq!(&f.row(1)[4..], &[0.0, 0.0]);
        // swapping direction swaps the endpoint blocks and keeps the difference
        let rev = build_candidate_features(&cache, &inst, Task::Forbid, Some(&[1, 0, 3, 2])).unwrap();
        assert_eq!(rev.row(0), &[3.0, 1.0, 1.0, 2.0, 2.0, 1.0]);
        let nodes = build_candidate_features(&cache, &inst, Task::Removal, None).unwrap();
        assert_eq!((nodes.rows(), nodes.dim()), (4, 2));
        assert!(build_candidate_features(&cache, &inst, Task::Forbid, None).is_err());
        let missing = make_instance(vec![[0.0, 0.0]; 4], "other").unwrap();
        assert!(matches!(build_candidate_features(&cache, &missing, Task::Removal, None), Err(Error::Alignment(_))));
    }

    #[test]
    fn features_are_permutation_covariant() {
        let data = dataset(1);
        let inst = &data[0];
        let cache = synth_random_embeddings(&data, 3, 5).unwrap();
        let n = inst.n();
        let perm: Vec<usize> = (0..n).rev().collect();
        let relabeled = inst.permuted(&perm).unwrap();
        let block = cache.block(inst.id()).unwrap();
        let values = perm.iter().flat_map(|&p| block.row(p, 3).iter().copied()).collect();
        let permuted = ActivationCache::new(
            "ref",
            "l",
            3,
            vec![ActivationBlock { instance_id: inst.id().into(), n, values }],
        )
        .unwrap();
        let a = build_candidate_features(&cache, inst, Task::Removal, None).unwrap();
        let b = build_candidate_features(&permuted, &relabeled, Task::Removal, None).unwrap();
        let mut ra: Vec<Vec<u64>> = a.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        let mut rb: Vec<Vec<u64>> = b.iter_rows().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
        ra.sort();
        rb.sort();
        assert_eq!(ra, rb);
    }
}
