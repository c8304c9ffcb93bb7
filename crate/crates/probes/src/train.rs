//! Training loop, model selection, multi-seed runs and probe files.

use crate::error::{ProbeError, Result};
use crate::loss::compute_loss;
use crate::model::{Objective, Params, Probe, ProbeConfig, Selection};
use crate::optim::AdamW;
use crate::splits::SplitSpec;
use crate::standardize::Standardizer;
use crate::tape::{Mat, Tape};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use tspsense::evaluation::{spearman_rho, topk_hit};
use tspsense::features::CandidateFeatures;
use tspsense::Task;

pub const PROBE_FORMAT: &str = "tspsense.probe";
pub const PROBE_VERSION: u32 = 1;

/// Features and labels of one instance.
#[derive(Clone, Debug)]
pub struct ProbeExample {
    pub instance_id: String,
    pub features: CandidateFeatures,
    pub deltas_pct: Vec<f64>,
}

impl ProbeExample {
    pub fn new(instance_id: impl Into<String>, features: CandidateFeatures, deltas_pct: Vec<f64>) -> Result<Self> {
        let instance_id = instance_id.into();
        if features.rows() != deltas_pct.len() {
            return Err(ProbeError::Invalid(format!(
                "instance '{instance_id}': {} feature rows for {} labels",
                features.rows(),
                deltas_pct.len()
            )));
        }
        Ok(ProbeExample { instance_id, features, deltas_pct })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch 0 evaluates the initial parameters; later epochs average the
    /// per-instance training losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedProbe {
    pub probe: Probe,
    pub task: Task,
    pub standardizer: Standardizer,
    pub curve: Vec<EpochRecord>,
    pub selected_epoch: usize,
    pub selection: Selection,
}

/// Loss of one instance and its gradient for every parameter tensor.
pub fn loss_and_gradients(
    probe: &Probe,
    x: &Mat,
    deltas_pct: &[f64],
    standardizer: Option<&Standardizer>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Vec<Mat>)> {
    let mut tape = Tape::new();
    let (out, vars) = probe.forward(&mut tape, x, rng)?;
    let scores = &tape.value(out).data;
    let (loss, grad) = compute_loss(probe.config.objective, scores, deltas_pct, standardizer, probe.config.temperature)?;
    let mut grads = tape.backward(out, Mat::column(&grad));
    let per_param = vars
        .iter()
        .zip(&probe.params.tensors)
        .map(|(v, t)| grads[v.index()].take().unwrap_or_else(|| Mat::zeros(t.rows, t.cols)))
        .collect();
    Ok((loss, per_param))
}

struct Prepared<'a> {
    x: Mat,
    ex: &'a ProbeExample,
}

fn collect<'a>(ids: &[String], by_id: &HashMap<&str, &'a ProbeExample>, split: &str) -> Result<Vec<&'a ProbeExample>> {
    let missing: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !by_id.contains_key(id)).collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).copied().collect();
        return Err(ProbeError::Missing(format!(
            "{} {split} instance(s) lack features or labels: {}{}",
            missing.len(),
            shown.join(", "),
            if missing.len() > shown.len() { ", ..." } else { "" }
        )));
    }
    Ok(ids.iter().map(|id| by_id[id.as_str()]).collect())
}

fn prepare<'a>(set: &[&'a ProbeExample], st: &Standardizer) -> Result<Vec<Prepared<'a>>> {
    set.iter().map(|ex| Ok(Prepared { x: st.transform(&ex.features)?, ex })).collect()
}

/// Mean loss and top-1 accuracy with dropout disabled.
fn evaluate(probe: &Probe, set: &[Prepared<'_>], st: &Standardizer) -> Result<(f64, f64)> {
    let (mut loss, mut hits) = (0.0, 0usize);
    for p in set {
        let scores = probe.outputs(&p.x)?;
        loss += compute_loss(probe.config.objective, &scores, &p.ex.deltas_pct, Some(st), probe.config.temperature)?.0;
        hits += topk_hit(&scores, &p.ex.deltas_pct, 1)? as usize;
    }
    let n = set.len() as f64;
    Ok((loss / n, hits as f64 / n))
}

/// Trains on `splits.train`, selecting the epoch with the best validation
/// loss or validation top-1 (ties broken by loss). Deterministic for a given
/// config, data and seed.
pub fn train_probe(config: &ProbeConfig, examples: &[ProbeExample], splits: &SplitSpec) -> Result<TrainedProbe> {
    config.validate()?;
    splits.validate()?;
    let by_id: HashMap<&str, &ProbeExample> = examples.iter().map(|e| (e.instance_id.as_str(), e)).collect();
    let train = collect(&splits.train, &by_id, "train")?;
    let val = collect(&splits.val, &by_id, "val")?;
    if train.is_empty() {
        return Err(ProbeError::Split("training split is empty".into()));
    }
    let task = train[0].features.task;
    if let Some(e) = train.iter().chain(&val).find(|e| e.features.task != task) {
        return Err(ProbeError::Invalid(format!("instance '{}' has {} features, expected {task}", e.instance_id, e.features.task)));
    }

    let train_feats: Vec<&CandidateFeatures> = train.iter().map(|e| &e.features).collect();
    let train_targets: Vec<&[f64]> = train.iter().map(|e| e.deltas_pct.as_slice()).collect();
    let regression = config.objective == Objective::Regression;
    let st = Standardizer::fit(&train_feats, regression.then_some(train_targets.as_slice()))?;
    let train = prepare(&train, &st)?;
    let val = prepare(&val, &st)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = Probe::init(config, st.dim(), &mut rng)?;
    let selection = config.selection();
    let mut opt = AdamW::new(config.lr, config.weight_decay, &probe.params.tensors);

    let (init_loss, _) = evaluate(&probe, &train, &st)?;
    let init_val = if val.is_empty() { None } else { Some(evaluate(&probe, &val, &st)?) };
    let mut curve = vec![EpochRecord {
        epoch: 0,
        train_loss: init_loss,
        val_loss: init_val.map(|v| v.0),
        val_top1: init_val.map(|v| v.1),
    }];
    let mut best: Option<((f64, f64), usize, Params)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads: Vec<Mat> = probe.params.tensors.iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let p = &train[i];
                let (loss, g) = loss_and_gradients(&probe, &p.x, &p.ex.deltas_pct, Some(&st), Some(&mut rng))?;
                if !loss.is_finite() {
                    return Err(ProbeError::NonFinite { epoch, batch: b, lr: config.lr });
                }
                epoch_loss += loss;
                for (acc, g) in grads.iter_mut().zip(&g) {
                    for (a, v) in acc.data.iter_mut().zip(&g.data) {
                        *a += v * scale;
                    }
                }
            }
            if grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
                return Err(ProbeError::NonFinite { epoch, batch: b, lr: config.lr });
            }
            opt.step(&mut probe.params.tensors, &grads);
        }
        let train_loss = epoch_loss / train.len() as f64;
        let record = if val.is_empty() {
            EpochRecord { epoch, train_loss, val_loss: None, val_top1: None }
        } else {
            let (vl, vt) = evaluate(&probe, &val, &st)?;
            if !vl.is_finite() {
                return Err(ProbeError::NonFinite { epoch, batch: 0, lr: config.lr });
            }
            EpochRecord { epoch, train_loss, val_loss: Some(vl), val_top1: Some(vt) }
        };
        log::debug!("epoch {epoch}: train {:.5} val {:?} top1 {:?}", record.train_loss, record.val_loss, record.val_top1);
        let key = match selection {
            Selection::ValLoss => (-record.val_loss.unwrap_or(0.0), 0.0),
            Selection::ValTop1 => (record.val_top1.unwrap_or(0.0), -record.val_loss.unwrap_or(0.0)),
        };
        // without validation data the last epoch wins
        let better = val.is_empty() || best.as_ref().is_none_or(|(k, _, _)| key > *k);
        if better {
            best = Some((key, epoch, probe.params.clone()));
        }
        curve.push(record);
    }

    let selected_epoch = match best {
        Some((_, epoch, params)) => {
            probe.params = params;
            epoch
        }
        None => 0,
    };
    Ok(TrainedProbe { probe, task, standardizer: st, curve, selected_epoch, selection })
}

impl TrainedProbe {
    /// Scores one instance's candidates. Regression outputs are mapped back to
    /// percent-delta units.
    pub fn score(&self, features: &CandidateFeatures) -> Result<Vec<f64>> {
        if features.task != self.task {
            return Err(ProbeError::Invalid(format!("probe was trained for task {}, features are for {}", self.task, features.task)));
        }
        let x = self.standardizer.transform(features)?;
        let out = self.probe.outputs(&x)?;
        Ok(match self.probe.config.objective {
            Objective::Regression => out.into_iter().map(|z| self.standardizer.unstandardize_target(z)).collect(),
            _ => out,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(&ProbeFile::from(self))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ProbeFile = serde_json::from_slice(&std::fs::read(path)?)?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct ParamBlob {
    name: String,
    rows: usize,
    cols: usize,
    /// Base64 of little-endian f64 values, row-major.
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ProbeFile {
    format: String,
    version: u32,
    task: Task,
    config: ProbeConfig,
    input_dim: usize,
    selection: Selection,
    selected_epoch: usize,
    standardizer: Standardizer,
    params: Vec<ParamBlob>,
    curve: Vec<EpochRecord>,
}

impl From<&TrainedProbe> for ProbeFile {
    fn from(t: &TrainedProbe) -> Self {
        let params = t
            .probe
            .params
            .names
            .iter()
            .zip(&t.probe.params.tensors)
            .map(|(name, m)| ParamBlob {
                name: name.clone(),
                rows: m.rows,
                cols: m.cols,
                data: B64.encode(m.data.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>()),
            })
            .collect();
        ProbeFile {
            format: PROBE_FORMAT.into(),
            version: PROBE_VERSION,
            task: t.task,
            config: t.probe.config.clone(),
            input_dim: t.probe.input_dim,
            selection: t.selection,
            selected_epoch: t.selected_epoch,
            standardizer: t.standardizer.clone(),
            params,
            curve: t.curve.clone(),
        }
    }
}

impl TryFrom<ProbeFile> for TrainedProbe {
    type Error = ProbeError;

    fn try_from(f: ProbeFile) -> Result<Self> {
        if f.format != PROBE_FORMAT || f.version != PROBE_VERSION {
            return Err(ProbeError::Format(format!("expected {PROBE_FORMAT} v{PROBE_VERSION}, found {} v{}", f.format, f.version)));
        }
        // rebuild the architecture, then check every stored tensor against it
        let mut probe = Probe::init(&f.config, f.input_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        if f.params.len() != probe.params.names.len() || f.standardizer.dim() != f.input_dim {
            return Err(ProbeError::Format("parameter list does not match the configured architecture".into()));
        }
        for (k, blob) in f.params.iter().enumerate() {
            let slot = &mut probe.params.tensors[k];
            if blob.name != probe.params.names[k] || (blob.rows, blob.cols) != (slot.rows, slot.cols) {
                return Err(ProbeError::Format(format!("unexpected parameter '{}' ({}x{})", blob.name, blob.rows, blob.cols)));
            }
            let bytes = B64.decode(&blob.data).map_err(|e| ProbeError::Format(format!("parameter '{}': {e}", blob.name)))?;
            if bytes.len() != 8 * slot.len() {
                return Err(ProbeError::Format(format!("parameter '{}' has {} bytes", blob.name, bytes.len())));
            }
            slot.data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        }
        Ok(TrainedProbe {
            probe,
            task: f.task,
            standardizer: f.standardizer,
            curve: f.curve,
            selected_epoch: f.selected_epoch,
            selection: f.selection,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub instances: usize,
    pub top1: f64,
    pub top5: f64,
    pub rho: f64,
}

/// Ranking metrics of a trained probe on the given instances.
pub fn evaluate_split(probe: &TrainedProbe, examples: &[ProbeExample], ids: &[String]) -> Result<SplitMetrics> {
    let by_id: HashMap<&str, &ProbeExample> = examples.iter().map(|e| (e.instance_id.as_str(), e)).collect();
    let set = collect(ids, &by_id, "evaluation")?;
    if set.is_empty() {
        return Err(ProbeError::Split("nothing to evaluate".into()));
    }
    let (mut top1, mut top5, mut rho) = (0.0, 0.0, 0.0);
    for ex in &set {
        let s = probe.score(&ex.features)?;
        let m = s.len();
        top1 += topk_hit(&s, &ex.deltas_pct, 1)? as u8 as f64;
        top5 += topk_hit(&s, &ex.deltas_pct, 5.min(m))? as u8 as f64;
        if m >= 2 {
            rho += spearman_rho(&s, &ex.deltas_pct)?.rho;
        }
    }
    let n = set.len() as f64;
    Ok(SplitMetrics { instances: set.len(), top1: top1 / n, top5: top5 / n, rho: rho / n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Option<SplitMetrics>,
    pub selected_epoch: Option<usize>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    /// Split the metrics were computed on (test, or val when test is empty).
    pub split: String,
    pub runs: Vec<SeedRun>,
    pub failed: usize,
    pub mean: Option<SplitMetrics>,
    /// Sample standard deviation across successful seeds (0 for one seed).
    pub std: Option<SplitMetrics>,
}

/// Trains one probe per seed and aggregates held-out metrics. Failing seeds
/// are recorded and skipped.
pub fn train_multiseed(config: &ProbeConfig, examples: &[ProbeExample], splits: &SplitSpec, seeds: &[u64]) -> Result<MultiSeedReport> {
    if seeds.is_empty() {
        return Err(ProbeError::Config("at least one seed is required".into()));
    }
    let (split, ids) = if splits.test.is_empty() { ("val", &splits.val) } else { ("test", &splits.test) };
    let runs: Vec<SeedRun> = seeds
        .iter()
        .map(|&seed| {
            let cfg = ProbeConfig { seed, ..config.clone() };
            match train_probe(&cfg, examples, splits).and_then(|p| Ok((evaluate_split(&p, examples, ids)?, p.selected_epoch))) {
                Ok((m, epoch)) => SeedRun { seed, metrics: Some(m), selected_epoch: Some(epoch), error: None },
                Err(e) => {
                    log::warn!("seed {seed} failed: {e}");
                    SeedRun { seed, metrics: None, selected_epoch: None, error: Some(e.to_string()) }
                }
            }
        })
        .collect();
    let ok: Vec<&SplitMetrics> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let failed = runs.len() - ok.len();
    let (mean, std) = if ok.is_empty() {
        (None, None)
    } else {
        let k = ok.len() as f64;
        let field = |f: fn(&SplitMetrics) -> f64| {
            let mean = ok.iter().map(|m| f(m)).sum::<f64>() / k;
            let var = if ok.len() > 1 { ok.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            (mean, var.sqrt())
        };
        let (t1, t5, r) = (field(|m| m.top1), field(|m| m.top5), field(|m| m.rho));
        let n = ok[0].instances;
        (
            Some(SplitMetrics { instances: n, top1: t1.0, top5: t5.0, rho: r.0 }),
            Some(SplitMetrics { instances: n, top1: t1.1, top5: t5.1, rho: r.1 }),
        )
    };
    Ok(MultiSeedReport { split: split.into(), runs, failed, mean, std })
}
