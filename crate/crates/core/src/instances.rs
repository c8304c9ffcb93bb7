//! Instances, deterministic generation and the canonical scaled metric.
//!
//! Coordinates live in the unit square. Every distance used downstream is the
//! Euclidean norm on coordinates scaled by 100 and rounded to 4 decimals
//! (round-half-to-even), which is what [`ScaledMetric`] precomputes.
//!
//! Generation recipe: `ChaCha8Rng::seed_from_u64(seed)` (rand_core's PCG32
//! seed expansion), then for each node in index order two draws
//! `x = (next_u64() >> 11) * 2^-53`, `y = (next_u64() >> 11) * 2^-53`.
//! The recipe does not depend on any distribution code in `rand`, so datasets
//! are bit-reproducible across platforms and `rand` upgrades.

use crate::error::{Error, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Smallest node count for which both sensitivity tasks are non-degenerate.
pub const MIN_NODES: usize = 4;

/// Coordinate scale applied before rounding.
pub const COORD_SCALE: f64 = 100.0;

/// Fractional decimal digits kept after scaling.
pub const COORD_DECIMALS: i32 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRecord", into = "InstanceRecord")]
pub struct Instance {
    id: String,
    coords: Vec<[f64; 2]>,
    seed: Option<u64>,
}

/// On-disk shape of an instance (one JSON object per line).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub n: usize,
    pub coords: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TryFrom<InstanceRecord> for Instance {
    type Error = Error;

    fn try_from(rec: InstanceRecord) -> Result<Self> {
        if rec.n != rec.coords.len() {
            return Err(Error::Format(format!(
                "instance '{}' declares n = {} but has {} coordinates",
                rec.id,
                rec.n,
                rec.coords.len()
            )));
        }
        let mut inst = make_instance(rec.coords, rec.id)?;
        inst.seed = rec.seed;
        Ok(inst)
    }
}

impl From<Instance> for InstanceRecord {
    fn from(inst: Instance) -> Self {
        InstanceRecord {
            n: inst.coords.len(),
            id: inst.id,
            coords: inst.coords,
            seed: inst.seed,
        }
    }
}

impl Instance {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The instance restricted to `nodes` (in the given order), re-indexed from 0.
    /// Used by the service to view a constrained state as a smaller instance.
    pub fn subset(&self, nodes: &[usize], id: impl Into<String>) -> Result<Instance> {
        let mut coords = Vec::with_capacity(nodes.len());
        for &i in nodes {
            let c = self
                .coords
                .get(i)
                .ok_or(Error::IndexOutOfRange { index: i, n: self.n() })?;
            coords.push(*c);
        }
        make_instance(coords, id)
    }

    /// Relabels nodes: node `perm[k]` of `self` becomes node `k` of the result.
    pub fn permuted(&self, perm: &[usize]) -> Result<Instance> {
        check_permutation(perm, self.n())?;
        let mut out = self.subset(perm, self.id.clone())?;
        out.seed = self.seed;
        Ok(out)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Invalid(format!("permutation has {} entries, expected {n}", perm.len())));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Invalid(format!("not a permutation of 0..{n}")));
        }
    }
    Ok(())
}

fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Samples `n` points i.i.d. uniform on the unit square.
pub fn generate_instance(n: usize, seed: u64) -> Result<Instance> {
    if n < MIN_NODES {
        return Err(Error::InvalidSize { got: n, min: MIN_NODES });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..n)
        .map(|_| {
            let x = unit_interval(rng.next_u64());
            let y = unit_interval(rng.next_u64());
            [x, y]
        })
        .collect();
    Ok(Instance {
        id: format!("n{n}-s{seed}"),
        coords,
        seed: Some(seed),
    })
}

/// Builds an instance from imported coordinates. Duplicate points are allowed.
pub fn make_instance(coords: Vec<[f64; 2]>, id: impl Into<String>) -> Result<Instance> {
    if coords.len() < MIN_NODES {
        return Err(Error::InvalidSize { got: coords.len(), min: MIN_NODES });
    }
    for (index, &[x, y]) in coords.iter().enumerate() {
        let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !ok(x) || !ok(y) {
            return Err(Error::CoordinateOutOfRange { index, x, y });
        }
    }
    Ok(Instance {
        id: id.into(),
        coords,
        seed: None,
    })
}

/// Scales a raw coordinate by 100 and rounds half-to-even at 4 decimals.
pub fn scale_coordinate(raw: f64) -> f64 {
    (raw * COORD_SCALE * 1e4).round_ties_even() / 1e4
}

/// Distance on the scaled, rounded coordinates of `inst`.
pub fn scaled_distance(inst: &Instance, i: usize, j: usize) -> Result<f64> {
    let n = inst.n();
    for index in [i, j] {
        if index >= n {
            return Err(Error::IndexOutOfRange { index, n });
        }
    }
    let [xi, yi] = inst.coords[i].map(scale_coordinate);
    let [xj, yj] = inst.coords[j].map(scale_coordinate);
    Ok(((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt())
}

/// Scaled coordinates plus the dense pairwise distance table.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledMetric {
    scaled: Vec<[f64; 2]>,
    dist: Vec<f64>,
}

impl ScaledMetric {
    /// The canonical metric: scale 100, 4-decimal rounding.
    pub fn new(inst: &Instance) -> Self {
        Self::from_scaled(inst.coords.iter().map(|c| c.map(scale_coordinate)).collect())
    }

    /// A metric with an arbitrary uniform scale and optional rounding. Only the
    /// canonical metric is used for labels; this exists to check that percent
    /// deltas do not depend on the scale.
    pub fn with_scale(inst: &Instance, scale: f64, round: bool) -> Self {
        let f = |v: f64| {
            if round {
                (v * scale * 1e4).round_ties_even() / 1e4
            } else {
                v * scale
            }
        };
        Self::from_scaled(inst.coords.iter().map(|c| c.map(f)).collect())
    }

    fn from_scaled(scaled: Vec<[f64; 2]>) -> Self {
        let n = scaled.len();
        let mut dist = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = ((scaled[i][0] - scaled[j][0]).powi(2) + (scaled[i][1] - scaled[j][1]).powi(2)).sqrt();
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        ScaledMetric { scaled, dist }
    }

    pub fn n(&self) -> usize {
        self.scaled.len()
    }

    pub fn scaled_coords(&self) -> &[[f64; 2]] {
        &self.scaled
    }

    /// Unchecked lookup; panics on out-of-range indices.
    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.scaled.len() + j]
    }

    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.n();
        for index in [i, j] {
            if index >= n {
                return Err(Error::IndexOutOfRange { index, n });
            }
        }
        Ok(self.d(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Instance {
        make_instance(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], "square").unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(12, 7).unwrap();
        let b = generate_instance(12, 7).unwrap();
        assert_eq!(a, b);
        for (p, q) in a.coords().iter().zip(b.coords()) {
            assert_eq!(p[0].to_bits(), q[0].to_bits());
            assert_eq!(p[1].to_bits(), q[1].to_bits());
        }
        assert_ne!(a.coords(), generate_instance(12, 8).unwrap().coords());
    }

    #[test]
    fn generation_rejects_small_n() {
        assert!(matches!(generate_instance(3, 0), Err(Error::InvalidSize { got: 3, .. })));
    }

    #[test]
    fn generated_points_look_uniform() {
        let inst = generate_instance(100, 1).unwrap();
        assert_eq!(inst.n(), 100);
        let (mut mx, mut my) = (0.0, 0.0);
        for &[x, y] in inst.coords() {
            assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
            mx += x / 100.0;
            my += y / 100.0;
        }
        assert!((mx - 0.5f64).abs() < 0.15, "mean x = {mx}");
        assert!((my - 0.5f64).abs() < 0.15, "mean y = {my}");
    }

    #[test]
    fn distances_on_fixtures() {
        let sq = square();
        assert_eq!(scaled_distance(&sq, 0, 1).unwrap(), 100.0);
        assert_eq!(scaled_distance(&sq, 2, 2).unwrap(), 0.0);
        let inst = make_instance(vec![[0.0, 0.0], [0.12345, 0.0], [0.5, 0.5], [1.0, 1.0]], "t").unwrap();
        assert!((scaled_distance(&inst, 0, 1).unwrap() - 12.345).abs() < 1e-12);
        assert!(matches!(
            scaled_distance(&inst, 0, 4),
            Err(Error::IndexOutOfRange { index: 4, n: 4 })
        ));
        let m = ScaledMetric::new(&inst);
        assert_eq!(m.distance(0, 1).unwrap(), scaled_distance(&inst, 0, 1).unwrap());
    }

    #[test]
    fn rounding_keeps_four_decimals_half_even() {
        assert_eq!(scale_coordinate(0.123456789), 12.3457);
        // 0.5 / 1e6 and 1.5 / 1e6 scale to exact binary ties
        assert_eq!(scale_coordinate(0.5 / 1e6) * 1e4, 0.0);
        assert_eq!(scale_coordinate(1.5 / 1e6) * 1e4, 2.0);
        assert_eq!(scale_coordinate(1.0), 100.0);
        for c in generate_instance(50, 3).unwrap().coords() {
            let s = scale_coordinate(c[0]);
            assert!(((s * 1e4).round() - s * 1e4).abs() < 1e-6);
        }
    }

    #[test]
    fn make_instance_validates() {
        assert_eq!(square().n(), 4);
        assert!(square().seed().is_none());
        let err = make_instance(vec![[0.0, 0.0], [1.2, 0.5], [0.1, 0.1], [0.2, 0.2]], "bad").unwrap_err();
        assert!(matches!(err, Error::CoordinateOutOfRange { index: 1, .. }));
        assert!(err.to_string().contains("index 1"));
        let dup = make_instance(vec![[0.5, 0.5]; 4], "dup").unwrap();
        assert_eq!(dup.n(), 4);
        assert!(make_instance(vec![[0.0, 0.0]; 3], "small").is_err());
    }

    #[test]
    fn record_roundtrip_validates() {
        let inst = generate_instance(6, 11).unwrap();
        let line = serde_json::to_string(&inst).unwrap();
        assert!(line.contains("\"n\":6"));
        let back: Instance = serde_json::from_str(&line).unwrap();
        assert_eq!(back, inst);
        let bad = r#"{"id":"x","n":5,"coords":[[0,0],[1,0],[1,1],[0,1]]}"#;
        assert!(serde_json::from_str::<Instance>(bad).is_err());
    }

    #[test]
    fn triangle_inequality_on_random_instance() {
        let inst = generate_instance(20, 5).unwrap();
        let m = ScaledMetric::new(&inst);
        for i in 0..20 {
            for j in 0..20 {
                assert_eq!(m.d(i, j), m.d(j, i));
                for k in 0..20 {
                    assert!(m.d(i, k) <= m.d(i, j) + m.d(j, k) + 1e-9);
                }
            }
        }
    }
}
