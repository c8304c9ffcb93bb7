use crate::args::*;
use crate::error::{CliError, Result};
use crate::manifest::{self, Recorder};
use crate::render::{render_svg, Coloring};
use serde::Serialize;
use serde_json::json;
use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use tspsense::baselines::{build_geometry_features, Baseline, CandidateScores, ScoreSet, METHOD_ORACLE};
use tspsense::evaluation::{
    alpha_grid, comparison_table, ensemble_scores, evaluate_method, select_alpha, AlphaCase, EnsembleMode, EnsembleSpec, EvalReport,
};
use tspsense::io::{dataset_checksum, read_dataset, write_dataset};
use tspsense::labeling::{label_dataset, LabelSet};
use tspsense::representations::{
    build_candidate_features, read_activation_cache, read_activation_cache_for, synth_random_embeddings, write_activation_cache,
    ActivationCache,
};
use tspsense::solver::{solve_exact, solve_heuristic, MAX_EXACT_NODES};
use tspsense::{generate_instance, Instance, SolveConstraints, Task};
use tspsense_probes::{evaluate_split, make_splits, train_multiseed, train_probe, ProbeConfig, ProbeExample, SplitSpec, TrainedProbe};
use tspsense_service::{AppState, FeatureSource, LoadedProbe, ServiceConfig};

pub struct Ctx {
    pub argv: Vec<String>,
    pub data_dir: Option<PathBuf>,
}

impl Ctx {
    /// Relative paths are taken from the data directory when one is set.
    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn recorder(&self, command: &Command) -> Result<Recorder> {
        Ok(Recorder::new(self.argv.clone(), self.data_dir.clone(), serde_json::to_value(command)?))
    }
}

pub fn run(ctx: &Ctx, command: &Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(ctx, command, a),
        Command::Label(a) => label(ctx, command, a),
        Command::Baseline(a) => baseline(ctx, command, a),
        Command::Split(a) => split(ctx, command, a),
        Command::SynthCache(a) => synth_cache(ctx, command, a),
        Command::ProbeTrain(a) => probe_train(ctx, command, a),
        Command::ProbeScore(a) => probe_score(ctx, command, a),
        Command::Eval(a) => eval(ctx, command, a),
        Command::Render(a) => render(ctx, command, a),
        Command::Serve(a) => serve(ctx, a),
        Command::Rerun(a) => rerun(ctx, a),
    }
}

fn load_dataset(ctx: &Ctx, rec: &mut Recorder, path: &Path) -> Result<(PathBuf, Vec<Instance>, String)> {
    let path = ctx.path(path);
    let dataset = read_dataset(&path)?;
    rec.input(&path)?;
    let checksum = dataset_checksum(&dataset);
    Ok((path, dataset, checksum))
}

fn load_labels(ctx: &Ctx, rec: &mut Recorder, path: &Path, dataset_checksum: &str) -> Result<LabelSet> {
    let path = ctx.path(path);
    let labels = LabelSet::read(&path)?;
    rec.input(&path)?;
    if labels.header.dataset_checksum != dataset_checksum {
        return Err(tspsense::Error::Checksum(format!(
            "{} was labeled on dataset {}, not {dataset_checksum}",
            path.display(),
            labels.header.dataset_checksum
        ))
        .into());
    }
    Ok(labels)
}

/// The base tour of `inst`: from the labels when available, otherwise solved exactly.
fn base_tour(inst: &Instance, labels: Option<&LabelSet>) -> Result<Vec<usize>> {
    if let Some(l) = labels.and_then(|l| l.get(inst.id())) {
        return Ok(l.base_tour.clone());
    }
    Ok(solve_exact(inst, &SolveConstraints::new())?.order)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn gen(ctx: &Ctx, cmd: &Command, a: &GenArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Validation("--count must be at least 1".into()));
    }
    let mut rec = ctx.recorder(cmd)?;
    let dataset = (0..a.count as u64)
        .map(|k| generate_instance(a.n, a.seed.wrapping_add(k)))
        .collect::<tspsense::Result<Vec<_>>>()?;
    let out = ctx.path(&a.out);
    let checksum = write_dataset(&out, &dataset)?;
    rec.extra("dataset_checksum", &checksum)?;
    rec.finish(&[&out])?;
    println!("wrote {} instances (n = {}) to {} [{checksum}]", a.count, a.n, out.display());
    Ok(())
}

fn label(ctx: &Ctx, cmd: &Command, a: &LabelArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, _) = load_dataset(ctx, &mut rec, &a.input)?;
    let out = ctx.path(&a.out);
    let summary = label_dataset(&dataset, a.task, a.workers.max(1), &out, a.resume)?;
    rec.extra("summary", &summary)?;
    rec.finish(&[&out])?;
    println!(
        "{}: labeled {}, skipped {}, failed {} of {} ({} solves, mean {:.4}s / median {:.4}s per instance)",
        summary.task,
        summary.labeled,
        summary.skipped,
        summary.failures.len(),
        summary.total,
        summary.solves,
        summary.mean_seconds,
        summary.median_seconds
    );
    if summary.all_ok() {
        return Ok(());
    }
    for f in &summary.failures {
        log::error!("{}: {}", f.instance_id, f.error);
    }
    Err(CliError::Partial(format!("{} instance(s) could not be labeled", summary.failures.len())))
}

fn baseline(ctx: &Ctx, cmd: &Command, a: &BaselineArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, checksum) = load_dataset(ctx, &mut rec, &a.input)?;
    let labels = a.labels.as_ref().map(|p| load_labels(ctx, &mut rec, p, &checksum)).transpose()?;
    let key = a.method.strip_prefix("baseline.").unwrap_or(&a.method);
    let records: Vec<CandidateScores> = if key == METHOD_ORACLE {
        let labels = labels.as_ref().ok_or_else(|| CliError::Validation("the oracle method needs --labels".into()))?;
        dataset
            .iter()
            .map(|inst| {
                labels
                    .get(inst.id())
                    .map(CandidateScores::oracle)
                    .ok_or_else(|| CliError::Validation(format!("no labels for instance '{}'", inst.id())))
            })
            .collect::<Result<_>>()?
    } else {
        let method: Baseline = a.method.parse()?;
        dataset
            .iter()
            .map(|inst| {
                let tour = if method == Baseline::NearestNeighbor { None } else { Some(base_tour(inst, labels.as_ref())?) };
                Ok(method.score(inst, tour.as_deref())?)
            })
            .collect::<Result<_>>()?
    };
    let set = ScoreSet::from_scores(&checksum, records)?;
    let out = ctx.path(&a.out);
    set.write(&out)?;
    rec.finish(&[&out])?;
    println!("wrote {} scores for {} instances to {}", set.method(), set.records.len(), out.display());
    Ok(())
}

fn split(ctx: &Ctx, cmd: &Command, a: &SplitArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, _) = load_dataset(ctx, &mut rec, &a.input)?;
    let ratios: [f64; 3] = a
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| CliError::Validation("--ratios takes exactly three values".into()))?;
    let ids: Vec<String> = dataset.iter().map(|i| i.id().to_string()).collect();
    let spec = make_splits(&ids, ratios, a.seed)?;
    let out = ctx.path(&a.out);
    spec.write(&out)?;
    rec.finish(&[&out])?;
    println!("train {} / val {} / test {} -> {}", spec.train.len(), spec.val.len(), spec.test.len(), out.display());
    Ok(())
}

fn synth_cache(ctx: &Ctx, cmd: &Command, a: &SynthCacheArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, _) = load_dataset(ctx, &mut rec, &a.input)?;
    let cache = synth_random_embeddings(&dataset, a.dim, a.seed)?;
    let out = ctx.path(&a.out);
    let m = write_activation_cache(&cache, &out)?;
    rec.extra("cache", &m)?;
    rec.finish(&[&out])?;
    println!("wrote {} blocks (d = {}) to {}", m.instance_count, m.d, out.display());
    Ok(())
}

fn features_for(
    inst: &Instance,
    task: Task,
    tour: &[usize],
    cache: Option<&ActivationCache>,
) -> tspsense::Result<tspsense::features::CandidateFeatures> {
    match cache {
        Some(c) => build_candidate_features(c, inst, task, Some(tour)),
        None => build_geometry_features(inst, task, Some(tour)),
    }
}

fn probe_config(a: &ProbeTrainArgs, task: Task) -> ProbeConfig {
    let mut c = ProbeConfig::reference(a.family, task);
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = a.$field { c.$field = v; })* };
    }
    set!(objective, temperature, width, depth, heads, ff_width, dropout, lr, weight_decay, epochs, batch_size);
    c.seed = a.seed;
    if a.selection.is_some() {
        c.selection = a.selection;
    }
    c
}

pub fn report_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn probe_train(ctx: &Ctx, cmd: &Command, a: &ProbeTrainArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, checksum) = load_dataset(ctx, &mut rec, &a.input)?;
    let labels = load_labels(ctx, &mut rec, &a.labels, &checksum)?;
    let splits_path = ctx.path(&a.splits);
    let splits = SplitSpec::read(&splits_path)?;
    rec.input(&splits_path)?;
    let cache = match &a.cache {
        Some(p) => {
            let p = ctx.path(p);
            let c = read_activation_cache_for(&p, &dataset)?;
            rec.input(&p)?;
            Some(c)
        }
        None => None,
    };
    let task = labels.task();
    let examples = dataset
        .iter()
        .filter_map(|inst| labels.get(inst.id()).map(|l| (inst, l)))
        .map(|(inst, l)| {
            let f = features_for(inst, task, &l.base_tour, cache.as_ref())?;
            Ok(ProbeExample::new(inst.id(), f, l.deltas_pct.clone())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let config = probe_config(a, task);
    log::info!("training {} / {} on {} examples", config.family, config.objective, examples.len());

    let probe = train_probe(&config, &examples, &splits)?;
    let out = ctx.path(&a.out);
    probe.save(&out)?;
    let metric = |name: &str, ids: &[String]| -> Result<Option<serde_json::Value>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let m = evaluate_split(&probe, &examples, ids)?;
        println!("{name:<5} top-1 {:.4}  top-5 {:.4}  spearman {:.4}  ({} instances)", m.top1, m.top5, m.rho, m.instances);
        Ok(Some(serde_json::to_value(m)?))
    };
    let val = metric("val", &splits.val)?;
    let test = metric("test", &splits.test)?;
    let multiseed = if a.seeds > 1 {
        let seeds: Vec<u64> = (0..a.seeds as u64).map(|k| a.seed.wrapping_add(k)).collect();
        Some(train_multiseed(&config, &examples, &splits, &seeds)?)
    } else {
        None
    };
    let report = json!({
        "task": task,
        "features": match &a.cache { Some(p) => json!({ "cache": p }), None => json!("geometry") },
        "config": config,
        "selection": probe.selection,
        "selected_epoch": probe.selected_epoch,
        "flagged_features": probe.standardizer.flagged,
        "val": val,
        "test": test,
        "curve": probe.curve,
        "multiseed": multiseed,
    });
    let rpath = report_path(&out);
    write_json(&rpath, &report)?;
    rec.finish(&[&out, &rpath])?;
    println!("selected epoch {} by {}; probe written to {}", probe.selected_epoch, probe.selection, out.display());
    if let Some(ms) = &multiseed {
        if let (Some(mean), Some(std)) = (&ms.mean, &ms.std) {
            println!("{} seeds on {}: top-1 {:.4} ± {:.4}", ms.runs.len() - ms.failed, ms.split, mean.top1, std.top1);
        }
        if ms.failed > 0 {
            return Err(CliError::Partial(format!("{} of {} seeds failed", ms.failed, ms.runs.len())));
        }
    }
    Ok(())
}

fn probe_score(ctx: &Ctx, cmd: &Command, a: &ProbeScoreArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let probe_path = ctx.path(&a.probe);
    let probe = TrainedProbe::load(&probe_path)?;
    rec.input(&probe_path)?;
    let (_, dataset, checksum) = load_dataset(ctx, &mut rec, &a.input)?;
    let labels = a.labels.as_ref().map(|p| load_labels(ctx, &mut rec, p, &checksum)).transpose()?;
    let cache = match &a.cache {
        Some(p) => {
            let p = ctx.path(p);
            let c = read_activation_cache_for(&p, &dataset)?;
            rec.input(&p)?;
            Some(c)
        }
        None => None,
    };
    let method = format!("probe.{}", a.name);
    let records = dataset
        .iter()
        .map(|inst| {
            let tour = base_tour(inst, labels.as_ref())?;
            let f = features_for(inst, probe.task, &tour, cache.as_ref())?;
            Ok(CandidateScores::new(inst.id(), probe.task, method.as_str(), probe.score(&f)?)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ScoreSet::from_scores(&checksum, records)?;
    let out = ctx.path(&a.out);
    set.write(&out)?;
    rec.finish(&[&out])?;
    println!("wrote {method} scores for {} instances to {}", set.records.len(), out.display());
    Ok(())
}

fn find_method<'a>(sets: &'a [ScoreSet], name: &str) -> Result<&'a ScoreSet> {
    sets.iter()
        .find(|s| s.method() == name || s.method().strip_prefix("baseline.") == Some(name))
        .ok_or_else(|| {
            let have: Vec<&str> = sets.iter().map(|s| s.method()).collect();
            CliError::Validation(format!("no score file for method '{name}' (have: {})", have.join(", ")))
        })
}

fn eval(ctx: &Ctx, cmd: &Command, a: &EvalArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let labels_path = ctx.path(&a.labels);
    let labels = LabelSet::read(&labels_path)?;
    rec.input(&labels_path)?;
    let mut sets = Vec::new();
    for p in &a.scores {
        let p = ctx.path(p);
        sets.push(ScoreSet::read(&p)?);
        rec.input(&p)?;
    }
    let splits = match &a.splits {
        Some(p) => {
            let p = ctx.path(p);
            let s = SplitSpec::read(&p)?;
            rec.input(&p)?;
            Some(s)
        }
        None => None,
    };
    let filter: Option<HashSet<String>> = match &splits {
        Some(s) => Some(s.get(&a.split)?.iter().cloned().collect()),
        None => None,
    };

    let mut reports: Vec<EvalReport> =
        sets.iter().map(|s| evaluate_method(s, &labels, filter.as_ref())).collect::<tspsense::Result<_>>()?;

    let mut ensemble_info = serde_json::Value::Null;
    if let Some(spec) = &a.ensemble {
        let (na, nb) = spec
            .split_once('+')
            .ok_or_else(|| CliError::Validation(format!("--ensemble expects A+B, got '{spec}'")))?;
        let (sa, sb) = (find_method(&sets, na)?, find_method(&sets, nb)?);
        let mode = a.mode.unwrap_or(match labels.task() {
            Task::Removal => EnsembleMode::Zscore,
            Task::Forbid => EnsembleMode::Raw,
        });
        let (alpha, grid) = match a.alpha {
            Some(alpha) => (alpha, None),
            None => {
                let splits = splits
                    .as_ref()
                    .ok_or_else(|| CliError::Validation("selecting alpha needs --splits (or pass --alpha)".into()))?;
                let grid = a.alpha_grid.clone().unwrap_or_else(alpha_grid);
                let mut cases: Vec<AlphaCase<'_>> = Vec::new();
                for id in &splits.val {
                    match (labels.get(id), sa.get(id), sb.get(id)) {
                        (Some(l), Some(x), Some(y)) => cases.push((l, x, y)),
                        _ => return Err(CliError::Validation(format!("validation instance '{id}' lacks labels or scores"))),
                    }
                }
                (select_alpha(mode, &grid, &cases)?, Some(grid))
            }
        };
        let spec = EnsembleSpec { method_a: sa.method().into(), method_b: sb.method().into(), mode, alpha };
        let records = sa
            .records
            .iter()
            .filter_map(|x| sb.get(&x.instance_id).map(|y| ensemble_scores(&spec, x, y)))
            .collect::<tspsense::Result<Vec<_>>>()?;
        let set = ScoreSet::from_scores(&sa.header.dataset_checksum, records)?;
        reports.push(evaluate_method(&set, &labels, filter.as_ref())?);
        println!("ensemble {} ({}) alpha = {alpha}", spec.method_name(), mode);
        ensemble_info = json!({ "spec": spec, "alpha_grid": grid, "selected_on": grid.as_ref().map(|_| "val") });
    }

    match a.format {
        ReportFormat::Table => {
            print!("{}", comparison_table(&reports));
            for r in &reports {
                println!();
                print!("{}", r.table());
            }
        }
        ReportFormat::Records => {
            for r in &reports {
                print!("{}", r.records_jsonl());
            }
        }
    }
    if let Some(out) = &a.out {
        let out = ctx.path(out);
        let split_name = if filter.is_some() { a.split.as_str() } else { "all" };
        write_json(&out, &json!({ "task": labels.task(), "split": split_name, "reports": reports, "ensemble": ensemble_info }))?;
        rec.finish(&[&out])?;
    }
    Ok(())
}

fn render(ctx: &Ctx, cmd: &Command, a: &RenderArgs) -> Result<()> {
    let mut rec = ctx.recorder(cmd)?;
    let (_, dataset, checksum) = load_dataset(ctx, &mut rec, &a.input)?;
    let inst = match &a.instance {
        Some(id) => dataset.iter().find(|i| i.id() == id).ok_or_else(|| CliError::Validation(format!("no instance '{id}'")))?,
        None => dataset.first().ok_or_else(|| CliError::Validation("empty dataset".into()))?,
    };
    let labels = a.labels.as_ref().map(|p| load_labels(ctx, &mut rec, p, &checksum)).transpose()?;
    let label_rec = labels.as_ref().and_then(|l| l.get(inst.id()));
    let tour = match label_rec {
        Some(l) => l.base_tour.clone(),
        None if inst.n() <= MAX_EXACT_NODES => solve_exact(inst, &SolveConstraints::new())?.order,
        None if a.heuristic => solve_heuristic(inst, &SolveConstraints::new(), 0)?.order,
        None => {
            return Err(CliError::Validation(format!(
                "instance '{}' has n = {} > {MAX_EXACT_NODES}; pass --heuristic or labels with a tour",
                inst.id(),
                inst.n()
            )))
        }
    };
    let scores = match &a.scores {
        Some(p) => {
            let p = ctx.path(p);
            let s = ScoreSet::read(&p)?;
            rec.input(&p)?;
            if s.header.dataset_checksum != checksum {
                return Err(tspsense::Error::Checksum(format!("{} was computed on a different dataset", p.display())).into());
            }
            Some(s)
        }
        None => None,
    };
    let coloring = match (label_rec, &scores) {
        (Some(l), _) => Some(Coloring { task: l.task, values: &l.deltas_pct, label: format!("{} delta %", l.task) }),
        (None, Some(s)) => {
            let r = s.get(inst.id()).ok_or_else(|| CliError::Validation(format!("no scores for instance '{}'", inst.id())))?;
            Some(Coloring { task: r.task, values: &r.scores, label: r.method.clone() })
        }
        (None, None) => {
            if labels.is_some() {
                return Err(CliError::Validation(format!("no labels for instance '{}'", inst.id())));
            }
            None
        }
    };
    if let Some(c) = &coloring {
        let expected = match c.task {
            Task::Removal => inst.n(),
            Task::Forbid => tour.len(),
        };
        if c.values.len() != expected {
            return Err(CliError::Validation(format!("{} values for {expected} candidates", c.values.len())));
        }
    }
    let out = ctx.path(&a.out);
    std::fs::write(&out, render_svg(inst, &tour, coloring.as_ref()))?;
    rec.finish(&[&out])?;
    println!("rendered {} to {}", inst.id(), out.display());
    Ok(())
}

fn parse_probe_flag(ctx: &Ctx, spec: &str) -> Result<(String, LoadedProbe)> {
    let bad = || CliError::Validation(format!("--probe expects NAME=FILE[,cache=FILE], got '{spec}'"));
    let mut parts = spec.split(',');
    let (name, file) = parts.next().and_then(|p| p.split_once('=')).ok_or_else(bad)?;
    let mut features = FeatureSource::Geometry;
    for extra in parts {
        match extra.split_once('=') {
            Some(("cache", path)) => features = FeatureSource::Activations(read_activation_cache(&ctx.path(Path::new(path)))?),
            _ => return Err(bad()),
        }
    }
    let probe = TrainedProbe::load(&ctx.path(Path::new(file)))?;
    Ok((name.to_string(), LoadedProbe { probe, features }))
}

fn serve(ctx: &Ctx, a: &ServeArgs) -> Result<()> {
    let probes: HashMap<String, LoadedProbe> = a.probe.iter().map(|p| parse_probe_flag(ctx, p)).collect::<Result<_>>()?;
    let config = ServiceConfig {
        exact_cap: a.exact_cap,
        cache_size: a.cache_size,
        journal_dir: a.journal.as_ref().map(|p| ctx.path(p)),
    };
    let state = AppState::new(config, probes)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        };
        tspsense_service::serve(listener, state, shutdown).await
    })?;
    Ok(())
}

fn rerun(ctx: &Ctx, a: &RerunArgs) -> Result<()> {
    let m = manifest::read(&ctx.path(&a.manifest))?;
    let mut argv = vec!["tspsense".to_string()];
    argv.extend(m.argv.iter().cloned());
    let cli = <crate::args::Cli as clap::Parser>::try_parse_from(&argv)
        .map_err(|e| CliError::Validation(format!("manifest arguments no longer parse: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(CliError::Validation("a manifest cannot record another rerun".into()));
    }
    let inner = Ctx { argv: m.argv.clone(), data_dir: cli.data_dir.clone().or(m.data_dir.clone()) };
    log::info!("re-running: {}", m.argv.join(" "));
    run(&inner, &cli.command)
}
