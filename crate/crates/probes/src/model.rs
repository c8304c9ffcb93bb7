//! Probe configurations, parameters and forward passes.

use crate::error::{ProbeError, Result};
use crate::tape::{Mat, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use tspsense::features::CandidateFeatures;
use tspsense::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    DeepSets,
    SetTransformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Regression,
    HardCe,
    SoftCe,
}

/// Which validation quantity picks the returned epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    ValLoss,
    ValTop1,
}

macro_rules! string_enum {
    ($t:ty { $($v:ident => $s:literal),+ $(,)? }) => {
        impl $t {
            pub fn as_str(self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $t {
            type Err = ProbeError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(ProbeError::Config(format!(
                        "unknown {} '{s}' (expected one of: {})",
                        stringify!($t).to_lowercase(),
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

string_enum!(Family { Linear => "linear", DeepSets => "deepsets", SetTransformer => "settransformer" });
string_enum!(Objective { Regression => "regression", HardCe => "hard_ce", SoftCe => "soft_ce" });
string_enum!(Selection { ValLoss => "val_loss", ValTop1 => "val_top1" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub family: Family,
    pub objective: Objective,
    /// Soft-CE temperature; ignored by the other objectives.
    pub temperature: f64,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Instances per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Defaults to validation loss for regression, validation top-1 otherwise.
    #[serde(default)]
    pub selection: Option<Selection>,
}

impl ProbeConfig {
    /// Small defaults suitable for quick runs; see [`ProbeConfig::reference`]
    /// for the full-size settings.
    pub fn new(family: Family, objective: Objective) -> Self {
        ProbeConfig {
            family,
            objective,
            temperature: 2.0,
            width: 64,
            depth: 2,
            heads: 4,
            ff_width: 128,
            dropout: 0.0,
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            selection: None,
        }
    }

    /// Reference hyperparameters per family and task.
    pub fn reference(family: Family, task: Task) -> Self {
        let objective = match task {
            Task::Removal => Objective::Regression,
            Task::Forbid => Objective::SoftCe,
        };
        let mut c = ProbeConfig::new(family, objective);
        match (family, task) {
            (Family::Linear, _) => {
                c.lr = 1e-2;
                c.weight_decay = 0.0;
            }
            (Family::DeepSets, _) => {
                c.width = 256;
                c.depth = if task == Task::Removal { 2 } else { 3 };
                c.dropout = 0.1;
                c.lr = 1e-3;
                c.weight_decay = if task == Task::Removal { 1e-4 } else { 1e-3 };
                c.selection = Some(Selection::ValLoss);
            }
            (Family::SetTransformer, _) => {
                c.width = 256;
                c.depth = 4;
                c.heads = 4;
                c.ff_width = 512;
                c.dropout = 0.1;
                c.lr = if task == Task::Removal { 3e-4 } else { 1e-3 };
                c.weight_decay = 1e-3;
            }
        }
        c
    }

    pub fn selection(&self) -> Selection {
        self.selection.unwrap_or(match self.objective {
            Objective::Regression => Selection::ValLoss,
            Objective::HardCe | Objective::SoftCe => Selection::ValTop1,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ProbeError::Config(msg));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0,1), got {}", self.dropout));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        match self.family {
            Family::Linear => {}
            Family::DeepSets => {
                if self.width == 0 {
                    return bad("deepsets width must be positive".into());
                }
            }
            Family::SetTransformer => {
                if self.width == 0 || self.heads == 0 || self.ff_width == 0 {
                    return bad("settransformer width, heads and ff width must be positive".into());
                }
                if self.width % self.heads != 0 {
                    return bad(format!("heads ({}) must divide width ({})", self.heads, self.width));
                }
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed, family-defined order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl Params {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }
}

/// Records parameter shapes and, when initializing, draws their values.
struct Init<'a> {
    rng: &'a mut ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Mat>,
}

impl Init<'_> {
    /// Weight `fan_in x out` and bias `1 x out`, both `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    fn linear(&mut self, name: &str, fan_in: usize, out: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_in * out).map(|_| self.rng.random_range(-bound..=bound)).collect();
        let b = (0..out).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(format!("{name}.w"), Mat::from_vec(fan_in, out, w));
        self.push(format!("{name}.b"), Mat::from_vec(1, out, b));
    }

    fn norm(&mut self, name: &str, width: usize) {
        self.push(format!("{name}.gain"), Mat::filled(1, width, 1.0));
        self.push(format!("{name}.bias"), Mat::zeros(1, width));
    }

    fn push(&mut self, name: String, m: Mat) {
        self.names.push(name);
        self.tensors.push(m);
    }
}

/// A probe's architecture plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub config: ProbeConfig,
    pub input_dim: usize,
    pub params: Params,
}

/// Supplies parameter variables in construction order during a forward pass.
struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        self.at += 1;
        self.vars[self.at - 1]
    }

    fn linear(&mut self, tape: &mut Tape, x: Var) -> Var {
        let (w, b) = (self.next(), self.next());
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }
}

/// Inverted dropout: keeps each entry with probability `1 - p` and rescales.
fn dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Var {
    match rng {
        Some(rng) if p > 0.0 => {
            let n = tape.value(x).len();
            let keep = 1.0 / (1.0 - p);
            let mask = (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
            tape.mask(x, mask)
        }
        _ => x,
    }
}

impl Probe {
    pub fn init(config: &ProbeConfig, input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(ProbeError::Config("feature dimension must be positive".into()));
        }
        let mut init = Init { rng, names: Vec::new(), tensors: Vec::new() };
        let c = config;
        match c.family {
            Family::Linear => init.linear("linear", input_dim, 1),
            Family::DeepSets => {
                let mut d = input_dim;
                for l in 0..c.depth {
                    init.linear(&format!("phi.{l}"), d, c.width);
                    d = c.width;
                }
                init.linear("rho.0", 2 * d, c.width);
                init.linear("rho.1", c.width, 1);
            }
            Family::SetTransformer => {
                init.linear("input", input_dim, c.width);
                for l in 0..c.depth {
                    for part in ["q", "k", "v", "o"] {
                        init.linear(&format!("layer.{l}.attn.{part}"), c.width, c.width);
                    }
                    init.norm(&format!("layer.{l}.norm1"), c.width);
                    init.linear(&format!("layer.{l}.ff.0"), c.width, c.ff_width);
                    init.linear(&format!("layer.{l}.ff.1"), c.ff_width, c.width);
                    init.norm(&format!("layer.{l}.norm2"), c.width);
                }
                init.linear("head", c.width, 1);
            }
        }
        Ok(Probe {
            config: config.clone(),
            input_dim,
            params: Params { names: init.names, tensors: init.tensors },
        })
    }

    /// Records the forward pass on `tape`. Returns the `m x 1` score variable and
    /// the parameter variables (in [`Params`] order). Dropout is active only when
    /// `rng` is given.
    pub fn forward(&self, tape: &mut Tape, x: &Mat, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Var, Vec<Var>)> {
        if x.cols != self.input_dim {
            return Err(ProbeError::Dim { expected: self.input_dim, got: x.cols });
        }
        if x.rows == 0 {
            return Err(ProbeError::Invalid("no candidates to score".into()));
        }
        let vars: Vec<Var> = self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let mut p = Cursor { vars: &vars, at: 0 };
        let c = &self.config;
        let m = x.rows;
        let input = tape.leaf(x.clone());
        let out = match c.family {
            Family::Linear => p.linear(tape, input),
            Family::DeepSets => {
                let mut h = input;
                for _ in 0..c.depth {
                    let y = p.linear(tape, h);
                    let y = tape.relu(y);
                    h = dropout(tape, y, c.dropout, rng.as_deref_mut());
                }
                let pooled = tape.mean_rows(h);
                let context = tape.broadcast_rows(pooled, m);
                let joint = tape.concat_cols(&[h, context]);
                let y = p.linear(tape, joint);
                let y = tape.relu(y);
                p.linear(tape, y)
            }
            Family::SetTransformer => {
                let mut h = p.linear(tape, input);
                let dh = c.width / c.heads;
                let scale = 1.0 / (dh as f64).sqrt();
                for _ in 0..c.depth {
                    let q = p.linear(tape, h);
                    let k = p.linear(tape, h);
                    let v = p.linear(tape, h);
                    let mut heads = Vec::with_capacity(c.heads);
                    for head in 0..c.heads {
                        let (qh, kh, vh) = (
                            tape.slice_cols(q, head * dh, dh),
                            tape.slice_cols(k, head * dh, dh),
                            tape.slice_cols(v, head * dh, dh),
                        );
                        let logits = tape.matmul_t(qh, kh);
                        let logits = tape.scale(logits, scale);
                        let att = tape.softmax_rows(logits);
                        heads.push(tape.matmul(att, vh));
                    }
                    let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
                    let a = p.linear(tape, joined);
                    let a = dropout(tape, a, c.dropout, rng.as_deref_mut());
                    let r = tape.add(h, a);
                    let (g, b) = (p.next(), p.next());
                    h = tape.layer_norm(r, g, b);
                    let f = p.linear(tape, h);
                    let f = tape.relu(f);
                    let f = p.linear(tape, f);
                    let f = dropout(tape, f, c.dropout, rng.as_deref_mut());
                    let r = tape.add(h, f);
                    let (g, b) = (p.next(), p.next());
                    h = tape.layer_norm(r, g, b);
                }
                p.linear(tape, h)
            }
        };
        debug_assert_eq!(p.at, vars.len());
        Ok((out, vars))
    }

    /// Raw model outputs for an already standardized `m x d` matrix.
    pub fn outputs(&self, x: &Mat) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, x, None)?;
        Ok(tape.value(out).data.clone())
    }
}

fn probe_outputs(probe: &Probe, family: Family, features: &CandidateFeatures) -> Result<Vec<f64>> {
    if probe.config.family != family {
        return Err(ProbeError::Config(format!("expected a {family} probe, got {}", probe.config.family)));
    }
    probe.outputs(&features_matrix(features))
}

/// `s_i = w . x_i + b` for every candidate row.
pub fn score_linear(probe: &Probe, features: &CandidateFeatures) -> Result<Vec<f64>> {
    probe_outputs(probe, Family::Linear, features)
}

/// Per-candidate network, mean-pooled context, joint readout.
pub fn score_deepsets(probe: &Probe, features: &CandidateFeatures) -> Result<Vec<f64>> {
    probe_outputs(probe, Family::DeepSets, features)
}

/// Self-attention encoder without positional information and a shared head.
pub fn score_settransformer(probe: &Probe, features: &CandidateFeatures) -> Result<Vec<f64>> {
    probe_outputs(probe, Family::SetTransformer, features)
}

pub fn features_matrix(features: &CandidateFeatures) -> Mat {
    Mat::from_vec(features.rows(), features.dim(), features.data().to_vec())
}
