//! Implementations of the single-step subcommands.

use std::path::Path;

use serde::Deserialize;
use serde_json::json;

use sepdetect::attack::{fgsm, AttackConfig};
use sepdetect::data::{load_dataset, save_dataset, LabeledDataset, ScenarioConfig};
use sepdetect::detector::{
    calibrate_threshold, detect as detect_one, fit_density, load_density_model, save_density_model,
    Provenance, ThresholdMode,
};
use sepdetect::evaluation::{build_report, EvalInputs};
use sepdetect::hashing::sha256_hex_file;
use sepdetect::model::ModelParams;
use sepdetect::numerics::Matrix;
use sepdetect::trainer::{load_checkpoint, save_checkpoint, train as train_model, TrainConfig};
use sepdetect::{Error, Result};

use crate::manifest::{manifest_path, RunManifest};
use crate::{
    AttackArgs, CalibrateArgs, DetectArgs, EvalArgs, FitDetectorArgs, GenDataArgs, TrainArgs,
};

/// Annotates I/O errors with the file they came from.
pub fn with_path<T>(result: Result<T>, path: &Path) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

/// Optional JSON config file shared by `train` and `repro`; any subset of
/// fields may be present. Explicit flags override these values.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub seed: Option<u64>,
    pub hidden: Option<Vec<usize>>,
    pub epsilon: Option<f64>,
    pub target_fpr: Option<f64>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub std: Option<f64>,
    pub gap: Option<f64>,
    pub pocket_size: Option<usize>,
    pub pocket_offset: Option<f64>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = with_path(std::fs::read_to_string(p).map_err(Error::from), p)?;
            let cfg: FileConfig = serde_json::from_str(&text)?;
            Ok(cfg)
        }
    }
}

pub fn parse_hidden(spec: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad hidden width '{s}'")))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidInput(format!("bad hidden layout '{spec}'")));
    }
    Ok(dims)
}

fn parse_clamp(spec: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::InvalidInput(format!(
            "clamp must be 'lo,hi', got '{spec}'"
        )));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad clamp bound '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad clamp bound '{}'", parts[1])))?;
    Ok((lo, hi))
}

pub fn gen_data(args: GenDataArgs) -> Result<()> {
    let cfg = ScenarioConfig {
        kind: args.kind,
        samples_per_class: args.per_class,
        dim: args.dim,
        std: args.std,
        gap: args.gap,
        num_classes: args.classes,
        pocket_size: args.pocket_size,
        pocket_offset: args.pocket_offset,
        seed: args.seed,
    };
    let ds = sepdetect::data::gen_scenario(&cfg)?;
    with_path(save_dataset(&ds, &args.out), &args.out)?;
    RunManifest::new("gen-data", serde_json::to_value(&cfg)?)
        .seed(args.seed)
        .output(&args.out)
        .write(&args.out)?;
    println!(
        "wrote {} samples ({} per class, {} classes) to {}",
        ds.len(),
        args.per_class,
        args.classes,
        args.out.display()
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let ds = with_path(load_dataset(&args.data, args.classes), &args.data)?;
    let file_cfg = load_file_config(args.config.as_deref())?;
    let defaults = TrainConfig::default();
    let hidden = match args.hidden.as_deref() {
        Some(spec) => parse_hidden(spec)?,
        None => file_cfg.hidden.clone().unwrap_or_else(|| vec![64, 32]),
    };
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(ds.dim());
    dims.extend(&hidden);
    dims.push(ds.num_classes());
    let cfg = TrainConfig {
        epochs: args.epochs.or(file_cfg.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file_cfg.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: args
            .learning_rate
            .or(file_cfg.learning_rate)
            .unwrap_or(defaults.learning_rate),
        lambda: args.lambda.or(file_cfg.lambda).unwrap_or(defaults.lambda),
        grad_clip_norm: args
            .grad_clip_norm
            .or(file_cfg.grad_clip_norm)
            .unwrap_or(defaults.grad_clip_norm),
        seed: args.seed.or(file_cfg.seed).unwrap_or(defaults.seed),
        dims,
    };
    let (params, history) = train_model(&ds, &cfg)?;
    with_path(save_checkpoint(&params, &cfg, &args.out), &args.out)?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?)
        .input(&args.data)?
        .seed(cfg.seed)
        .output(&args.out);
    if let Some(history_path) = &args.history {
        std::fs::write(history_path, serde_json::to_string_pretty(&history)?)?;
        manifest = manifest.output(history_path);
    }
    if let Some(config_path) = &args.config {
        manifest = manifest.input(config_path)?;
    }
    manifest.write(&args.out)?;
    let last = history.epochs.last();
    println!(
        "trained {} epochs (final accuracy {}) -> {}",
        cfg.epochs,
        last.map_or("n/a".to_string(), |e| format!("{:.4}", e.train_accuracy)),
        args.out.display()
    );
    Ok(())
}

/// Loads a checkpoint and a dataset, checking that they agree on dimensions
/// and class count.
fn load_model_and_data(
    checkpoint: &Path,
    data: &Path,
) -> Result<(ModelParams, TrainConfig, LabeledDataset)> {
    let (params, cfg) = with_path(load_checkpoint(checkpoint), checkpoint)?;
    let ds = with_path(load_dataset(data, Some(params.output_dim())), data)?;
    if ds.dim() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset dimension {} does not match model input {}",
            ds.dim(),
            params.input_dim()
        )));
    }
    Ok((params, cfg, ds))
}

pub fn attack(args: AttackArgs) -> Result<()> {
    let (params, _, ds) = load_model_and_data(&args.checkpoint, &args.data)?;
    let clamp = args.clamp.as_deref().map(parse_clamp).transpose()?;
    let attack_cfg = AttackConfig {
        epsilon: args.epsilon,
        clamp,
    };
    let mut rows = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        rows.push(fgsm(&params, x, y, &attack_cfg)?);
    }
    let adv = LabeledDataset::new(
        Matrix::from_rows(&rows)?,
        ds.labels().to_vec(),
        ds.num_classes(),
    )?;
    with_path(save_dataset(&adv, &args.out), &args.out)?;
    // The manifest doubles as the attack sidecar: epsilon, source checkpoint,
    // and source dataset with their hashes.
    RunManifest::new("attack", serde_json::to_value(&attack_cfg)?)
        .input(&args.checkpoint)?
        .input(&args.data)?
        .output(&args.out)
        .write(&args.out)?;
    println!(
        "perturbed {} samples at epsilon {} -> {}",
        adv.len(),
        args.epsilon,
        args.out.display()
    );
    Ok(())
}

pub fn fit_detector(args: FitDetectorArgs) -> Result<()> {
    let (params, _, train_ds) = load_model_and_data(&args.checkpoint, &args.train_data)?;
    let dm = fit_density(&params, &train_ds, args.sigma)?;
    let provenance = Provenance {
        checkpoint_sha256: sha256_hex_file(&args.checkpoint)?,
        train_data_sha256: sha256_hex_file(&args.train_data)?,
    };
    with_path(save_density_model(&dm, &provenance, &args.out), &args.out)?;
    RunManifest::new(
        "fit-detector",
        json!({ "sigma": dm.sigma(), "sigma_given": args.sigma }),
    )
    .input(&args.checkpoint)?
    .input(&args.train_data)?
    .output(&args.out)
    .write(&args.out)?;
    println!(
        "fitted densities for {} classes (sigma {:.6}) -> {}",
        dm.num_classes(),
        dm.sigma(),
        args.out.display()
    );
    Ok(())
}

/// Loads a density model and verifies it was built from the given checkpoint.
fn load_verified_detector(
    detector: &Path,
    checkpoint: &Path,
) -> Result<(sepdetect::detector::DensityModel, Provenance)> {
    let (dm, provenance) = with_path(load_density_model(detector), detector)?;
    let actual = sha256_hex_file(checkpoint)?;
    if actual != provenance.checkpoint_sha256 {
        return Err(Error::ProvenanceMismatch(format!(
            "density model {} was fitted from a checkpoint with hash {}, but {} hashes to {}",
            detector.display(),
            provenance.checkpoint_sha256,
            checkpoint.display(),
            actual
        )));
    }
    Ok((dm, provenance))
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let (dm, provenance) = load_verified_detector(&args.detector, &args.checkpoint)?;
    let (params, _) = with_path(load_checkpoint(&args.checkpoint), &args.checkpoint)?;
    let validation = with_path(
        load_dataset(&args.validation, Some(params.output_dim())),
        &args.validation,
    )?;
    let mode = if args.global_threshold {
        ThresholdMode::Global
    } else {
        ThresholdMode::PerClass
    };
    let calibrated = calibrate_threshold(&dm, &params, &validation, args.target_fpr, mode)?;
    with_path(
        save_density_model(&calibrated, &provenance, &args.out),
        &args.out,
    )?;
    RunManifest::new(
        "calibrate",
        json!({ "target_fpr": args.target_fpr, "mode": mode }),
    )
    .input(&args.detector)?
    .input(&args.checkpoint)?
    .input(&args.validation)?
    .output(&args.out)
    .write(&args.out)?;
    let taus = &calibrated.thresholds().unwrap().taus;
    println!(
        "calibrated {} thresholds at target fpr {} -> {}",
        taus.len(),
        args.target_fpr,
        args.out.display()
    );
    Ok(())
}

pub fn detect(args: DetectArgs) -> Result<()> {
    let (dm, _) = load_verified_detector(&args.detector, &args.checkpoint)?;
    let (params, _, ds) = load_model_and_data(&args.checkpoint, &args.data)?;
    let mut out = String::from("row,predicted_class,density,threshold,is_adversarial\n");
    let mut flagged = 0usize;
    for i in 0..ds.len() {
        let r = detect_one(&dm, &params, ds.sample(i).0)?;
        if r.is_adversarial {
            flagged += 1;
        }
        out.push_str(&format!(
            "{i},{},{:.16e},{:.16e},{}\n",
            r.predicted_class, r.density, r.threshold_used, r.is_adversarial
        ));
    }
    with_path(
        std::fs::write(&args.out, out).map_err(Error::from),
        &args.out,
    )?;
    RunManifest::new("detect", json!({}))
        .input(&args.detector)?
        .input(&args.checkpoint)?
        .input(&args.data)?
        .output(&args.out)
        .write(&args.out)?;
    println!(
        "flagged {flagged} of {} rows as adversarial -> {}",
        ds.len(),
        args.out.display()
    );
    Ok(())
}

/// Reads the attack epsilon from an adversarial set's sidecar manifest.
fn epsilon_from_sidecar(adv_path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(manifest_path(adv_path)).ok()?;
    let doc: serde_json::Value = serde_json::from_str(&text).ok()?;
    doc.get("config")?.get("epsilon")?.as_f64()
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let (dm, _) = load_verified_detector(&args.detector, &args.checkpoint)?;
    let (params, train_cfg, clean) = load_model_and_data(&args.checkpoint, &args.clean)?;
    let adv = match &args.adv {
        Some(path) => Some(with_path(
            load_dataset(path, Some(params.output_dim())),
            path,
        )?),
        None => None,
    };
    let epsilon = args
        .epsilon
        .or_else(|| args.adv.as_deref().and_then(epsilon_from_sidecar));
    let attack_cfg = epsilon.map(AttackConfig::new);
    let report = build_report(&EvalInputs {
        scenario: &args.scenario,
        seeds: vec![train_cfg.seed],
        train_config: &train_cfg,
        attack_config: attack_cfg.as_ref(),
        params: &params,
        detector: &dm,
        clean_test: &clean,
        adversarial: adv.as_ref(),
    })?;
    with_path(
        std::fs::write(&args.out, serde_json::to_string_pretty(&report)?).map_err(Error::from),
        &args.out,
    )?;
    let mut manifest = RunManifest::new("eval", json!({ "scenario": args.scenario }))
        .input(&args.detector)?
        .input(&args.checkpoint)?
        .input(&args.clean)?;
    if let Some(path) = &args.adv {
        manifest = manifest.input(path)?;
    }
    manifest.output(&args.out).write(&args.out)?;
    match report.metrics.auc {
        Some(auc) => println!(
            "auc {auc:.4}, detection rate {:.4}, clean fpr {:.4} -> {}",
            report.metrics.detection_rate_at_fpr.unwrap_or(f64::NAN),
            report.metrics.clean_fpr_realized,
            args.out.display()
        ),
        None => println!(
            "no adversarial set; clean fpr {:.4} -> {}",
            report.metrics.clean_fpr_realized,
            args.out.display()
        ),
    }
    Ok(())
}
