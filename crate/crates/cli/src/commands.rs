//! One function per subcommand. Each validates its flags, does its work and
//! writes its artifacts plus a manifest into `--out`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use iic_core::baselines::{dataset_concepts, fit_lcbm, FcShap, FcShapRecord, Lcbm};
use iic_core::decomp::{ComponentDump, DecompConfig};
use iic_core::eval::{ComponentMasker, FeatureMasker};
use iic_core::experiment::{explained_sets, ExperimentConfig};
use iic_core::iic::{batch_explain, IicConfig};
use iic_core::nn::{dataset_samples, load_checkpoint, save_checkpoint, train_with_restarts, EpochRecord, ModelSpec, TrainConfig};
use iic_core::report::{
    fcshap_records, iic_records, lcbm_records, read_json, score, write_distributions_csv, write_global_csv, write_json,
    write_metrics_csv, ExplanationFile, Failure, Method, MethodScores,
};
use iic_core::signal::{compute_baselines, load_dataset, save_dataset, BaselineSet, DataFormat, Dataset, Split};
use iic_core::synth::{generate, SynthConfig, Task};

use crate::args::{EvaluateArgs, ExplainArgs, FormatArg, GenerateArgs, ReportArgs, TrainArgs};
use crate::manifest::RunManifest;

/// Bad flag values; reported with usage text and exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond { Ok(()) } else { Err(usage(msg)) }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("missing input: {}", path.display());
    }
    Ok(())
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroundTruth {
    task: Task,
    components: Vec<String>,
}

/// Generated or loaded data plus the config that produced it.
struct Data {
    synth: SynthConfig,
    train: Dataset,
    eval: Dataset,
}

fn dataset_path(dir: &Path, stem: &str) -> Result<(PathBuf, DataFormat)> {
    for format in [DataFormat::Csv, DataFormat::Json] {
        let p = dir.join(format!("{stem}.{}", format.extension()));
        if p.is_file() {
            return Ok((p, format));
        }
    }
    bail!("missing input: {}/{stem}.csv", dir.display())
}

fn load_data(dir: &Path) -> Result<Data> {
    let cfg_path = dir.join("synth_config.json");
    require_file(&cfg_path)?;
    let synth: SynthConfig = read_json(&cfg_path)?;
    let classes = synth.task.class_names();
    let (train_path, tf) = dataset_path(dir, "train")?;
    let (eval_path, ef) = dataset_path(dir, "eval")?;
    let train = load_dataset(&train_path, tf, Split::Train, classes.clone())
        .with_context(|| format!("reading {}", train_path.display()))?;
    let eval = load_dataset(&eval_path, ef, Split::Eval, classes).with_context(|| format!("reading {}", eval_path.display()))?;
    Ok(Data { synth, train, eval })
}

pub fn generate_cmd(args: &GenerateArgs) -> Result<RunManifest> {
    let mut cfg = SynthConfig::for_task(args.task.into(), args.seed);
    if let Some(n) = args.subjects {
        cfg.n_subjects = n;
    }
    if let Some(n) = args.windows_per_class {
        cfg.windows_per_class = n;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let start = Instant::now();
    out_dir(&args.out)?;

    let data = generate(&cfg)?;
    let format = match args.format {
        FormatArg::Csv => DataFormat::Csv,
        FormatArg::Json => DataFormat::Json,
    };
    let train = format!("train.{}", format.extension());
    let eval = format!("eval.{}", format.extension());
    save_dataset(&data.train, args.out.join(&train), format)?;
    save_dataset(&data.eval, args.out.join(&eval), format)?;
    write_json(args.out.join("synth_config.json"), &cfg)?;
    let gt = GroundTruth { task: cfg.task, components: data.ground_truth.iter().map(|k| k.name().to_string()).collect() };
    write_json(args.out.join("ground_truth.json"), &gt)?;
    Ok(RunManifest::new("generate", args, vec![], vec![train, eval, "synth_config.json".into(), "ground_truth.json".into()], Some(args.seed), start))
}

/// Training settings stored next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainRecord {
    spec: ModelSpec,
    train: TrainConfig,
    restarts: usize,
    history: Vec<EpochRecord>,
}

pub fn train_cmd(args: &TrainArgs) -> Result<RunManifest> {
    require(args.epochs != Some(0), "--epochs must be at least 1")?;
    require(args.restarts != Some(0), "--restarts must be at least 1")?;
    require(args.hidden != Some(0), "--hidden must be at least 1")?;
    require(args.lr.is_none_or(|lr| lr > 0.0 && lr.is_finite()), "--lr must be positive")?;
    require(args.weight_decay.is_none_or(|w| w >= 0.0 && w.is_finite()), "--weight-decay must be >= 0")?;
    let start = Instant::now();
    let data = load_data(&args.data)?;

    let mut cfg = ExperimentConfig::for_task(data.synth.task, args.seed);
    cfg.synth = data.synth.clone();
    cfg.synth.seed = args.seed;
    if let Some(a) = args.arch {
        cfg.arch = a.into();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.adam.lr = lr;
    }
    if let Some(r) = args.restarts {
        cfg.restarts = r;
    }
    if let Some(h) = args.hidden {
        cfg.hidden_size = h;
    }
    if let Some(w) = args.weight_decay {
        cfg.train.weight_decay = w;
    }
    let spec = cfg.model_spec();
    spec.validate().map_err(|e| usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;
    out_dir(&args.out)?;

    let mods = data.synth.modalities();
    let train_s = dataset_samples(&data.train, &mods)?;
    let eval_s = dataset_samples(&data.eval, &mods)?;
    let outcome = train_with_restarts(&spec, &train_s, &eval_s, &cfg.train, cfg.restarts)?;
    let baselines = compute_baselines(&data.train)?;

    save_checkpoint(&outcome.model, args.out.join("model.json"))?;
    write_json(args.out.join("baselines.json"), &baselines)?;
    let record = TrainRecord { spec, train: cfg.train.clone(), restarts: cfg.restarts, history: outcome.history };
    write_json(args.out.join("training.json"), &record)?;
    Ok(RunManifest::new(
        "train",
        args,
        vec![display(&args.data)],
        vec!["model.json".into(), "baselines.json".into(), "training.json".into()],
        Some(args.seed),
        start,
    ))
}

/// A fitted comparison explainer, stored so that `evaluate` can re-predict
/// masked inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
enum Explainer {
    Lcbm { baselines: BaselineSet, model: Lcbm },
    Fcshap { model: FcShapRecord },
}

fn iic_config(args: &ExplainArgs) -> IicConfig {
    IicConfig {
        epochs: args.epochs,
        lr: args.lr,
        max_deg: args.max_deg,
        penalty: args.penalty,
        threshold: args.threshold,
        seed: args.seed,
        ..IicConfig::default()
    }
}

pub fn explain_cmd(args: &ExplainArgs) -> Result<RunManifest> {
    let method = Method::from(args.method);
    iic_config(args).validate().map_err(|e| usage(e.to_string()))?;
    let model_dir = match (method, &args.model) {
        (Method::Iic, None) => return Err(usage("--model is required for --method iic")),
        (_, m) => m.clone(),
    };
    let start = Instant::now();
    let mut inputs = vec![display(&args.data)];
    if let Some(m) = &model_dir {
        require_file(&m.join("model.json"))?;
        inputs.push(display(m));
    }
    let data = load_data(&args.data)?;
    out_dir(&args.out)?;
    let mut outputs = vec!["explanations.json".to_string()];
    let manifest = |outputs| RunManifest::new("explain", args, inputs.clone(), outputs, Some(args.seed), start);

    if data.eval.is_empty() {
        log::warn!("{}: no windows to explain", display(&args.data));
        let empty = ExplanationFile { method, names: vec![], records: vec![], failures: vec![] };
        write_json(args.out.join("explanations.json"), &empty)?;
        return Ok(manifest(outputs));
    }

    let decomp = DecompConfig::default();
    let file = match method {
        Method::Iic => {
            let dir = model_dir.expect("checked above");
            let model = load_checkpoint(dir.join("model.json"))?;
            let baselines: BaselineSet = read_json(dir.join("baselines.json"))?;
            let batch = batch_explain(&model, data.eval.windows(), &baselines, &decomp, &iic_config(args));
            for (id, e) in &batch.failures {
                log::warn!("window {id} failed: {e}");
            }
            let ids: Vec<String> = batch.explanations.iter().map(|e| e.window_id.clone()).collect();
            let sets = explained_sets(&data.eval, &ids, &baselines, &decomp)?;
            if args.dump_components {
                let dumps: Vec<ComponentDump> = sets.iter().map(ComponentDump::from).collect();
                let text = serde_json::to_string_pretty(&dumps)? + "\n";
                let back: Vec<serde_json::Value> = serde_json::from_str(&text)?;
                anyhow::ensure!(back.len() == sets.len(), "component dump does not round-trip");
                fs::write(args.out.join("components.json"), text)?;
                outputs.push("components.json".into());
            }
            ExplanationFile {
                method,
                names: sets.first().map(|cs| cs.names()).unwrap_or_default(),
                records: iic_records(&batch.explanations, &sets),
                failures: batch.failures.iter().map(|(id, e)| Failure { window_id: id.clone(), error: e.to_string() }).collect(),
            }
        }
        Method::Lcbm => {
            let cfg = ExperimentConfig::for_task(data.synth.task, args.seed);
            let baselines = compute_baselines(&data.train)?;
            let lcbm = fit_lcbm(&data.train, &baselines, &decomp, &cfg.lcbm)?;
            let (_, rows) = dataset_concepts(&data.eval, &baselines, &decomp)?;
            let file = lcbm_records(&lcbm, &data.eval, &rows)?;
            write_json(args.out.join("explainer.json"), &Explainer::Lcbm { baselines, model: lcbm })?;
            outputs.push("explainer.json".into());
            file
        }
        Method::Fcshap => {
            let cfg = ExperimentConfig::for_task(data.synth.task, args.seed);
            let (fc, _) = FcShap::fit(&data.train, &data.eval, cfg.fcshap_hidden, args.seed, &cfg.fcshap_train, cfg.restarts)?;
            let file = fcshap_records(&fc, &data.eval)?;
            write_json(args.out.join("explainer.json"), &Explainer::Fcshap { model: fc.to_record() })?;
            outputs.push("explainer.json".into());
            file
        }
    };
    if !file.failures.is_empty() {
        log::warn!("{} of {} windows could not be explained", file.failures.len(), data.eval.len());
    }
    write_json(args.out.join("explanations.json"), &file)?;
    Ok(manifest(outputs))
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<RunManifest> {
    require(!args.fidelity_k.is_empty(), "--fidelity-k needs at least one value")?;
    require(args.fidelity_k.iter().all(|k| *k >= 1), "--fidelity-k values must be at least 1")?;
    require(args.sufficiency_tau.iter().all(|t| *t >= 0.0 && t.is_finite()), "--sufficiency-tau values must be >= 0")?;
    let start = Instant::now();
    let expl_path = args.explanations.join("explanations.json");
    require_file(&expl_path)?;
    let file: ExplanationFile = read_json(&expl_path)?;
    let mut inputs = vec![display(&args.data), display(&args.explanations)];
    if file.method == Method::Iic {
        let Some(m) = &args.model else { return Err(usage("--model is required for IIC explanations")) };
        require_file(&m.join("model.json"))?;
        inputs.push(display(m));
    }
    if file.records.is_empty() {
        bail!("{} holds no explanations", expl_path.display());
    }
    let data = load_data(&args.data)?;
    let taus = if args.sufficiency_tau.is_empty() { vec![file.method.default_tau()] } else { args.sufficiency_tau.clone() };
    let k = data.eval.num_classes();
    let rows: Vec<Vec<f64>> = file.records.iter().map(|r| r.values.clone()).collect();

    let scores: MethodScores = match file.method {
        Method::Iic => {
            let dir = args.model.as_ref().expect("checked above");
            let model = load_checkpoint(dir.join("model.json"))?;
            let baselines: BaselineSet = read_json(dir.join("baselines.json"))?;
            let ids: Vec<String> = file.records.iter().map(|r| r.window_id.clone()).collect();
            let sets = explained_sets(&data.eval, &ids, &baselines, &DecompConfig::default())?;
            score(&file, &ComponentMasker { model: &model, sets: &sets }, k, &args.fidelity_k, &taus, args.seed)?
        }
        Method::Lcbm | Method::Fcshap => {
            let path = args.explanations.join("explainer.json");
            require_file(&path)?;
            match read_json::<Explainer>(&path)? {
                Explainer::Lcbm { model, .. } => {
                    let masker = FeatureMasker { rows: &rows, train_mean: &model.mean, predict: |x: &[f64]| model.predict(x) };
                    score(&file, &masker, k, &args.fidelity_k, &taus, args.seed)?
                }
                Explainer::Fcshap { model } => {
                    let fc = FcShap::from_record(model)?;
                    let masker = FeatureMasker { rows: &rows, train_mean: &fc.train_mean, predict: |x: &[f64]| fc.predict(x) };
                    score(&file, &masker, k, &args.fidelity_k, &taus, args.seed)?
                }
            }
        }
    };
    out_dir(&args.out)?;
    write_metrics_csv(args.out.join("metrics.csv"), &scores.metric_rows())?;
    write_json(args.out.join("metrics.json"), &scores)?;
    Ok(RunManifest::new("evaluate", args, inputs, vec!["metrics.csv".into(), "metrics.json".into()], Some(args.seed), start))
}

pub fn report_cmd(args: &ReportArgs) -> Result<RunManifest> {
    let start = Instant::now();
    let path = args.explanations.join("explanations.json");
    require_file(&path)?;
    let file: ExplanationFile = read_json(&path)?;
    let global = file.global()?;
    out_dir(&args.out)?;
    write_json(args.out.join("global.json"), &global)?;
    write_global_csv(args.out.join("global_table.csv"), &global)?;
    write_distributions_csv(args.out.join("distributions.csv"), &global)?;
    Ok(RunManifest::new(
        "report",
        args,
        vec![display(&args.explanations)],
        vec!["global.json".into(), "global_table.csv".into(), "distributions.csv".into()],
        None,
        start,
    ))
}
