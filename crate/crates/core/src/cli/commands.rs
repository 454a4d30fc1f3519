//! Subcommand execution against fully resolved arguments.
//!
//! Every mutating command ends by saving a run manifest whose `args` map is
//! the complete resolved configuration, so `replay` can re-execute it
//! without the original command line or config file. File outputs go
//! through atomic writes; summaries go to stdout as a single line.

use std::path::{Path, PathBuf};

use nuadv::attack::{
    attack_dataset, AttackConfig, AttackInit, AttackMode, PerturbationBudget, SampleAttack,
};
use nuadv::certlp::certify;
use nuadv::consistency::{md_square_stats, GaussianModel};
use nuadv::data::{
    apply_standardization, covariance, dataset_to_csv_string, importance_to_csv_string,
    load_csv, load_importance_csv, pearson_importance, shapley_importance, standardize,
    ClassFilter, Dataset,
};
use nuadv::error::{Error, Result};
use nuadv::manifest::{write_atomic, RunManifest};
use nuadv::net::{load_model, save_model, train_clean, MlpModel, TrainConfig, TrainOutcome};
use nuadv::numerics::{Matrix, Vector};
use nuadv::omega::{load_omega, save_omega, OmegaTransform, PNorm};
use nuadv::smooth::{smoothed_predict, NoiseCovariance, SmoothingConfig};
use nuadv::train::{adversarial_train, match_budgets, AdvTrainConfig};

use super::args::ArgMap;

/// Run one named subcommand from a resolved argument map. `replay` is not
/// dispatchable: it has no manifest of its own.
pub fn dispatch(command: &str, args: ArgMap) -> Result<()> {
    match command {
        "prepare" => exec_prepare(args),
        "train" => exec_train(args),
        "attack" => exec_attack(args),
        "certify-lp" => exec_certify_lp(args),
        "certify-smooth" => exec_certify_smooth(args),
        "consistency" => exec_consistency(args),
        "importance" => exec_importance(args),
        other => Err(Error::Schema(format!("unknown command '{other}'"))),
    }
}

/// Re-execute a stored run and verify the outputs are reproduced bit for
/// bit. Inputs are checked first so a stale input is reported as the cause
/// rather than as an output mismatch.
pub fn exec_replay(manifest_path: &Path) -> Result<()> {
    let stored = RunManifest::load(manifest_path)?;
    for rec in &stored.inputs {
        let actual = nuadv::manifest::sha256_file(Path::new(&rec.path))?;
        if actual != rec.sha256 {
            return Err(Error::ReplayMismatch(format!(
                "input {} changed since the recorded run",
                rec.path
            )));
        }
    }
    dispatch(&stored.command, ArgMap::from_stored(stored.args.clone()))?;
    let mismatches = stored.verify_outputs(None)?;
    if !mismatches.is_empty() {
        return Err(Error::ReplayMismatch(mismatches.join("; ")));
    }
    println!(
        "replay ok: command={} outputs={} verified",
        stored.command,
        stored.outputs.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// Shared pieces

fn load_dataset(args: &ArgMap) -> Result<(Dataset, PathBuf)> {
    let path: PathBuf = args.require("data")?;
    let label: String = args.require("label")?;
    let d = load_csv(&path, &label, &[])?;
    Ok((d, path))
}

/// Build the weighting transform from its spec string. Data-derived kinds
/// need the dataset; `shapley` additionally needs a model. Imported files
/// are appended to `extra_inputs` for the manifest.
fn build_omega(
    spec: &str,
    data: Option<&Dataset>,
    model: Option<&MlpModel>,
    dim_hint: Option<usize>,
    seed: u64,
    extra_inputs: &mut Vec<PathBuf>,
) -> Result<OmegaTransform> {
    let need_data = |what: &str| -> Result<&Dataset> {
        data.ok_or_else(|| Error::Schema(format!("omega '{what}' needs a dataset (--data)")))
    };
    if spec == "identity" {
        let dim = data
            .map(|d| d.n_features())
            .or(dim_hint)
            .or_else(|| model.map(|m| m.input_dim()))
            .ok_or_else(|| Error::Schema("cannot infer dimension for identity omega".into()))?;
        return Ok(OmegaTransform::identity(dim));
    }
    if spec == "pearson" {
        let d = need_data("pearson")?;
        return OmegaTransform::from_importance(&pearson_importance(d)?);
    }
    if spec == "shapley" || spec.starts_with("shapley:") {
        let perms = match spec.strip_prefix("shapley:") {
            Some(n) => n.parse::<usize>().map_err(|e| {
                Error::Schema(format!("omega 'shapley:{n}': bad permutation count: {e}"))
            })?,
            None => 200,
        };
        let d = need_data("shapley")?;
        let m = model.ok_or_else(|| {
            Error::Schema("omega 'shapley' needs a model to explain (--model or --ref-model)".into())
        })?;
        return OmegaTransform::from_importance(&shapley_importance(m, d, perms, seed)?);
    }
    if spec == "md" {
        let d = need_data("md")?;
        return OmegaTransform::mahalanobis(&covariance(d, ClassFilter::All)?, None);
    }
    if spec == "md-target" {
        let d = need_data("md-target")?;
        return OmegaTransform::mahalanobis(&covariance(d, ClassFilter::Class(0))?, None);
    }
    if let Some(names) = spec.strip_prefix("mask:") {
        let d = need_data("mask")?;
        let mut mutable = vec![false; d.n_features()];
        for name in names.split(',') {
            mutable[d.feature_index(name.trim())?] = true;
        }
        return OmegaTransform::mask(mutable);
    }
    if let Some(path) = spec.strip_prefix("import:") {
        let p = PathBuf::from(path);
        extra_inputs.push(p.clone());
        if path.ends_with(".json") {
            return load_omega(&p);
        }
        let d = need_data("import (importance CSV)")?;
        return OmegaTransform::from_importance(&load_importance_csv(&p, d.feature_names())?);
    }
    Err(Error::Schema(format!(
        "unknown omega spec '{spec}' (expected identity | pearson | shapley[:permutations] \
         | md | md-target | mask:<names> | import:<file>)"
    )))
}

/// Attack mode from an omega spec plus the optional uniform cap. A literal
/// `identity` spec with no cap is the plain uniform ball.
fn attack_mode(spec: &str, omega: OmegaTransform, combo_epsilon: Option<f64>) -> AttackMode {
    match combo_epsilon {
        Some(epsilon_uniform) => AttackMode::Combo { omega, epsilon_uniform },
        None if spec == "identity" => AttackMode::Uniform,
        None => AttackMode::NonUniform(omega),
    }
}

fn parse_init(args: &mut ArgMap, seed: u64) -> Result<AttackInit> {
    let name: String = args.or_default("init", "zero".to_string())?;
    match name.as_str() {
        "zero" => Ok(AttackInit::Zero),
        "random" => Ok(AttackInit::RandomInBall { seed }),
        other => Err(Error::Schema(format!("init must be 'zero' or 'random', got '{other}'"))),
    }
}

fn attack_config(args: &mut ArgMap, mode: AttackMode, seed: u64) -> Result<AttackConfig> {
    Ok(AttackConfig {
        steps: args.or_default("steps", 40usize)?,
        step_size: args.optional("step-size")?,
        init: parse_init(args, seed)?,
        mode,
    })
}

/// `<out>.manifest.json` unless overridden.
fn manifest_path(args: &mut ArgMap, primary_output_key: &str) -> Result<PathBuf> {
    let out: String = args.require(primary_output_key)?;
    let path: String = args.or_default("manifest", format!("{out}.manifest.json"))?;
    Ok(PathBuf::from(path))
}

fn save_manifest(
    command: &str,
    args: &ArgMap,
    inputs: &[&Path],
    outputs: &[&Path],
    path: &Path,
) -> Result<()> {
    let mut m = RunManifest::new(command, args.inner().clone());
    for p in inputs {
        m.record_input(p)?;
    }
    for p in outputs {
        m.record_output(p)?;
    }
    m.save(path)
}

/// Headerless d x d covariance CSV (one row per line).
fn load_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?);
    }
    Matrix::from_rows(rows)
}

// ---------------------------------------------------------------------
// prepare

fn exec_prepare(mut args: ArgMap) -> Result<()> {
    let data_path: PathBuf = args.require("data")?;
    let label: String = args.require("label")?;
    let drop: Vec<String> = match args.optional::<String>("drop")? {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => Vec::new(),
    };
    let test_fraction: f64 = args.or_default("test-fraction", 0.3)?;
    let seed: u64 = args.or_default("seed", 0u64)?;
    let out_train: PathBuf = args.require("out-train")?;
    let out_test: PathBuf = args.require("out-test")?;
    let out_stats: Option<PathBuf> = args.optional("out-stats")?;
    let manifest = manifest_path(&mut args, "out-train")?;

    let raw = load_csv(&data_path, &label, &drop)?;
    let (train_raw, test_raw) = raw.split(test_fraction, seed)?;
    let (train_std, stats) = standardize(&train_raw)?;
    let test_std = apply_standardization(&test_raw, &stats)?;

    write_atomic(&out_train, dataset_to_csv_string(&train_std).as_bytes())?;
    write_atomic(&out_test, dataset_to_csv_string(&test_std).as_bytes())?;
    let mut outputs: Vec<&Path> = vec![&out_train, &out_test];
    if let Some(p) = &out_stats {
        let json = serde_json::to_string_pretty(&stats)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        write_atomic(p, json.as_bytes())?;
        outputs.push(p);
    }
    save_manifest("prepare", &args, &[&data_path], &outputs, &manifest)?;
    println!(
        "prepared: train={} test={} features={} -> {}, {}",
        train_std.n_samples(),
        test_std.n_samples(),
        train_std.n_features(),
        out_train.display(),
        out_test.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train

fn exec_train(mut args: ArgMap) -> Result<()> {
    let (data, data_path) = load_dataset(&args)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;

    let hidden: String = args.or_default("hidden", "16".to_string())?;
    let mut dims = vec![data.n_features()];
    for part in hidden.split(',') {
        dims.push(part.trim().parse::<usize>().map_err(|e| {
            Error::Schema(format!("argument 'hidden': bad layer width '{part}': {e}"))
        })?);
    }
    dims.push(2);

    let dropout: f64 = args.or_default("dropout", 0.0)?;
    let train_cfg = TrainConfig {
        epochs: args.or_default("epochs", 100usize)?,
        batch_size: args.or_default("batch-size", 32usize)?,
        learning_rate: args.or_default("learning-rate", 0.01)?,
        dropout_enabled: dropout > 0.0,
        seed,
    };
    let model0 = MlpModel::new(&dims, dropout, seed)?;

    let mut extra_inputs = Vec::new();
    let omega_spec: String = args.or_default("omega", "identity".to_string())?;
    let p: PNorm = args.require_p()?;
    let target_class: usize = args.or_default("target-class", 1usize)?;

    // A clean reference model backs shapley importances and budget
    // calibration: loaded when given, trained in place otherwise.
    let ref_model_path: Option<PathBuf> = args.optional("ref-model")?;
    let mut ref_model: Option<MlpModel> = None;
    let mut get_ref = |extra: &mut Vec<PathBuf>| -> Result<MlpModel> {
        if let Some(m) = &ref_model {
            return Ok(m.clone());
        }
        let m = match &ref_model_path {
            Some(p) => {
                extra.push(p.clone());
                load_model(p)?.0
            }
            None => train_clean(model0.clone(), &data, &train_cfg)?.model,
        };
        ref_model = Some(m.clone());
        Ok(m)
    };

    let needs_model = omega_spec == "shapley" || omega_spec.starts_with("shapley:");
    let shapley_ref = if needs_model { Some(get_ref(&mut extra_inputs)?) } else { None };
    let omega = build_omega(
        &omega_spec,
        Some(&data),
        shapley_ref.as_ref(),
        None,
        seed,
        &mut extra_inputs,
    )?;
    let combo_epsilon: Option<f64> = args.optional("combo-epsilon")?;
    let mode = attack_mode(&omega_spec, omega.clone(), combo_epsilon);

    // Budget: explicit radius wins (a replayed manifest stores the matched
    // value there); otherwise calibrate against the reference model.
    let steps: usize = args.or_default("steps", 40usize)?;
    let epsilon: Option<f64> = match args.optional("epsilon")? {
        Some(e) => Some(e),
        None => match args.optional::<f64>("match-l2")? {
            Some(target) => {
                let reference = get_ref(&mut extra_inputs)?;
                let eps =
                    match_budgets(&reference, &data, &mode, p, steps, target, target_class)?;
                args.set("epsilon", eps);
                Some(eps)
            }
            None => None,
        },
    };

    let outcome: TrainOutcome = match epsilon {
        Some(eps) => {
            let cfg = AdvTrainConfig {
                train: train_cfg,
                budget: PerturbationBudget::new(eps, p)?,
                attack: attack_config(&mut args, mode, seed)?,
                perturbed_fraction: args.or_default("fraction", 0.9)?,
                target_class,
            };
            adversarial_train(model0, &data, &cfg)?
        }
        None => train_clean(model0, &data, &train_cfg)?,
    };

    save_model(&outcome.model, None, &out)?;
    let mut outputs: Vec<&Path> = vec![&out];
    let out_omega: Option<PathBuf> = args.optional("out-omega")?;
    if let Some(p) = &out_omega {
        save_omega(&omega, p)?;
        outputs.push(p);
    }
    let mut inputs: Vec<&Path> = vec![&data_path];
    inputs.extend(extra_inputs.iter().map(|p| p.as_path()));
    save_manifest("train", &args, &inputs, &outputs, &manifest)?;
    println!(
        "trained: epochs={} final_loss={:.6} clean_accuracy={:.4} -> {}",
        outcome.epoch_losses.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN),
        outcome.model.accuracy(&data)?,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// attack

fn attack_csv(rows: &[SampleAttack], dim: usize) -> String {
    let mut s = String::from(
        "index,true_label,clean_prediction,adversarial_prediction,delta_l2,omega_delta_l2,attack_loss",
    );
    for j in 0..dim {
        s.push_str(&format!(",delta_{j}"));
    }
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.index,
            r.true_label,
            r.clean_prediction,
            r.adversarial_prediction,
            r.delta_l2,
            r.omega_delta_l2,
            r.attack_loss
        ));
        for v in &r.delta {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn exec_attack(mut args: ArgMap) -> Result<()> {
    let model_path: PathBuf = args.require("model")?;
    let (model, _) = load_model(&model_path)?;
    let (data, data_path) = load_dataset(&args)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;

    let mut extra_inputs = Vec::new();
    let omega_spec: String = args.or_default("omega", "identity".to_string())?;
    let omega =
        build_omega(&omega_spec, Some(&data), Some(&model), None, seed, &mut extra_inputs)?;
    let budget = PerturbationBudget::new(args.require("epsilon")?, args.require_p()?)?;
    let mode = attack_mode(&omega_spec, omega, args.optional("combo-epsilon")?);
    let cfg = attack_config(&mut args, mode, seed)?;
    let class: Option<usize> = args.optional("class")?;

    let rows = attack_dataset(&model, &data, &budget, &cfg, class)?;
    write_atomic(&out, attack_csv(&rows, data.n_features()).as_bytes())?;

    let n = rows.len();
    let flipped = rows.iter().filter(|r| r.adversarial_prediction != r.true_label).count();
    let mean_l2 = rows.iter().map(|r| r.delta_l2).sum::<f64>() / n.max(1) as f64;
    let mean_om = rows.iter().map(|r| r.omega_delta_l2).sum::<f64>() / n.max(1) as f64;
    let mut inputs: Vec<&Path> = vec![&model_path, &data_path];
    inputs.extend(extra_inputs.iter().map(|p| p.as_path()));
    save_manifest("attack", &args, &inputs, &[&out], &manifest)?;
    println!(
        "attacked: n={} flipped={} success_rate={:.4} mean_delta_l2={:.6} mean_omega_delta_l2={:.6} -> {}",
        n,
        flipped,
        flipped as f64 / n.max(1) as f64,
        mean_l2,
        mean_om,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// certify-lp

fn exec_certify_lp(mut args: ArgMap) -> Result<()> {
    let model_path: PathBuf = args.require("model")?;
    // Certification addresses the inference-time function, which never
    // drops units; the rate is stripped explicitly because the certifier
    // refuses ambiguous models.
    let model = load_model(&model_path)?.0.without_dropout();
    let (data, data_path) = load_dataset(&args)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;

    let mut extra_inputs = Vec::new();
    let omega_spec: String = args.or_default("omega", "identity".to_string())?;
    let omega =
        build_omega(&omega_spec, Some(&data), Some(&model), None, seed, &mut extra_inputs)?;
    let budget = PerturbationBudget::new(args.require("epsilon")?, args.require_p()?)?;

    let mut s = String::from("index,true_label,clean_prediction,certified,margin\n");
    let mut certified = 0usize;
    let mut margin_sum = 0.0;
    for i in 0..data.n_samples() {
        let x = data.row(i);
        let report = certify(&model, x, data.label(i), &omega, &budget)?;
        certified += report.certified as usize;
        margin_sum += report.margin;
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            i,
            data.label(i),
            model.predict(x)?,
            report.certified,
            report.margin
        ));
    }
    write_atomic(&out, s.as_bytes())?;

    let n = data.n_samples();
    let mut inputs: Vec<&Path> = vec![&model_path, &data_path];
    inputs.extend(extra_inputs.iter().map(|p| p.as_path()));
    save_manifest("certify-lp", &args, &inputs, &[&out], &manifest)?;
    println!(
        "certified: {}/{} ({:.2}%) mean_margin={:.6} epsilon={} omega={} -> {}",
        certified,
        n,
        100.0 * certified as f64 / n as f64,
        margin_sum / n as f64,
        budget.epsilon,
        omega_spec,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// certify-smooth

fn exec_certify_smooth(mut args: ArgMap) -> Result<()> {
    let model_path: PathBuf = args.require("model")?;
    let (model, _) = load_model(&model_path)?;
    let (data, data_path) = load_dataset(&args)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;
    let sigma: f64 = args.or_default("sigma", 1.0)?;
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }

    // Noise covariance is sigma^2 times a base matrix: identity for the
    // isotropic case, (Omega^T Omega)^{-1} for a weighting transform, or a
    // covariance file taken verbatim.
    let mut extra_inputs = Vec::new();
    let omega_spec: String = args.or_default("omega", "identity".to_string())?;
    let noise = match args.optional::<PathBuf>("noise-cov")? {
        Some(p) => {
            let base = load_matrix_csv(&p)?;
            extra_inputs.push(p);
            let scaled =
                Matrix::from_fn(base.rows(), base.cols(), |i, j| sigma * sigma * base.get(i, j));
            NoiseCovariance::Full(scaled)
        }
        None if omega_spec == "identity" => {
            NoiseCovariance::Isotropic { sigma, dim: data.n_features() }
        }
        None => {
            let omega = build_omega(
                &omega_spec,
                Some(&data),
                Some(&model),
                None,
                seed,
                &mut extra_inputs,
            )?;
            let base = omega.induced_covariance()?;
            let scaled =
                Matrix::from_fn(base.rows(), base.cols(), |i, j| sigma * sigma * base.get(i, j));
            NoiseCovariance::Full(scaled)
        }
    };

    let n0: usize = args.or_default("n0", 100usize)?;
    let n: usize = args.or_default("n", 10_000usize)?;
    let alpha: f64 = args.or_default("alpha", 0.001)?;
    let radius_threshold: f64 = args.or_default("radius", 0.0)?;

    let mut s = String::from("index,true_label,prediction,votes,p_a_lower,certified_md_radius\n");
    let mut abstained = 0usize;
    let mut certified_correct = 0usize;
    let mut radius_sum = 0.0;
    for i in 0..data.n_samples() {
        let cfg = SmoothingConfig {
            noise: noise.clone(),
            n0,
            n,
            alpha,
            // One seed per run; offsetting by the row index keeps samples
            // independent across rows while staying replayable.
            seed: seed.wrapping_add(i as u64),
        };
        let r = smoothed_predict(&model, data.row(i), &cfg)?;
        match r.prediction {
            Some(pred) => {
                if pred == data.label(i) && r.certified_md_radius >= radius_threshold {
                    certified_correct += 1;
                    radius_sum += r.certified_md_radius;
                }
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    i,
                    data.label(i),
                    pred,
                    r.votes,
                    r.p_a_lower,
                    r.certified_md_radius
                ));
            }
            None => {
                abstained += 1;
                s.push_str(&format!(
                    "{},{},abstain,{},{},0\n",
                    i,
                    data.label(i),
                    r.votes,
                    r.p_a_lower
                ));
            }
        }
    }
    write_atomic(&out, s.as_bytes())?;

    let total = data.n_samples();
    let mut inputs: Vec<&Path> = vec![&model_path, &data_path];
    inputs.extend(extra_inputs.iter().map(|p| p.as_path()));
    save_manifest("certify-smooth", &args, &inputs, &[&out], &manifest)?;
    println!(
        "smoothed: n={} abstained={} certified_correct={} fraction={:.4} mean_radius={:.6} threshold={} -> {}",
        total,
        abstained,
        certified_correct,
        certified_correct as f64 / total as f64,
        if certified_correct > 0 { radius_sum / certified_correct as f64 } else { 0.0 },
        radius_threshold,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// consistency

/// Perturbation vectors from an attack CSV: the `delta_<i>` columns in
/// index order.
fn load_deltas_csv(path: &Path) -> Result<Vec<Vector>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: empty file", path.display())))?;
    let mut delta_cols: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.split(',').enumerate() {
        if let Some(idx) = name.trim().strip_prefix("delta_") {
            if let Ok(i) = idx.parse::<usize>() {
                delta_cols.push((i, col));
            }
        }
    }
    if delta_cols.is_empty() {
        return Err(Error::Schema(format!(
            "{}: no delta_<i> columns in header",
            path.display()
        )));
    }
    delta_cols.sort_unstable();
    let mut deltas = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let mut v = Vector::with_capacity(delta_cols.len());
        for &(_, col) in &delta_cols {
            let cell = cells.get(col).ok_or_else(|| Error::Schema(format!(
                "{}:{}: row has {} cells, header has more",
                path.display(),
                lineno + 1,
                cells.len()
            )))?;
            v.push(cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                message: e.to_string(),
            })?);
        }
        deltas.push(v);
    }
    Ok(deltas)
}

fn exec_consistency(mut args: ArgMap) -> Result<()> {
    let deltas_path: PathBuf = args.require("deltas")?;
    let deltas = load_deltas_csv(&deltas_path)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;

    let mut extra_inputs = vec![deltas_path.clone()];
    // The plausibility reference covariance comes from a file or from the
    // weighting transform's induced covariance (Omega^T Omega)^{-1}.
    let sigma = match args.optional::<PathBuf>("cov-file")? {
        Some(p) => {
            let m = load_matrix_csv(&p)?;
            extra_inputs.push(p);
            m
        }
        None => {
            let data = match args.optional::<PathBuf>("data")? {
                Some(path) => {
                    let label: String = args.require("label")?;
                    let d = load_csv(&path, &label, &[])?;
                    extra_inputs.push(path);
                    Some(d)
                }
                None => None,
            };
            let model = match args.optional::<PathBuf>("model")? {
                Some(path) => {
                    let m = load_model(&path)?.0;
                    extra_inputs.push(path);
                    Some(m)
                }
                None => None,
            };
            let omega_spec: String = args.or_default("omega", "identity".to_string())?;
            let dim_hint = deltas.first().map(|d| d.len());
            let omega = build_omega(
                &omega_spec,
                data.as_ref(),
                model.as_ref(),
                dim_hint,
                seed,
                &mut extra_inputs,
            )?;
            omega.induced_covariance()?
        }
    };
    let gauss = GaussianModel::from_covariance(&sigma)?;
    let stats = md_square_stats(&gauss, &deltas)?;

    let mut s = String::from("bin_low,bin_high,count\n");
    for (i, c) in stats.counts.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{}\n",
            i as f64 * stats.bin_width,
            (i + 1) as f64 * stats.bin_width,
            c
        ));
    }
    write_atomic(&out, s.as_bytes())?;

    let mut log_gamma_sum = 0.0;
    for d in &deltas {
        log_gamma_sum += gauss.score(d)?.log_gamma;
    }
    let bound_part = match args.optional::<f64>("epsilon")? {
        Some(eps) => {
            let mut within = 0usize;
            for d in &deltas {
                within += gauss.bound_check(d, eps)?.within_bound as usize;
            }
            format!(" within_bound={:.4} (epsilon={eps})", within as f64 / stats.n as f64)
        }
        None => String::new(),
    };
    let inputs: Vec<&Path> = extra_inputs.iter().map(|p| p.as_path()).collect();
    save_manifest("consistency", &args, &inputs, &[&out], &manifest)?;
    println!(
        "consistency: n={} mean_md2={:.6} max_md2={:.6} mean_log_gamma={:.6}{} -> {}",
        stats.n,
        stats.mean,
        stats.max,
        log_gamma_sum / stats.n as f64,
        bound_part,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// importance

fn exec_importance(mut args: ArgMap) -> Result<()> {
    let (data, data_path) = load_dataset(&args)?;
    let out: PathBuf = args.require("out")?;
    let manifest = manifest_path(&mut args, "out")?;
    let seed: u64 = args.or_default("seed", 0u64)?;
    let method: String = args.or_default("method", "pearson".to_string())?;

    let mut inputs: Vec<PathBuf> = vec![data_path];
    let imp = if method == "pearson" {
        pearson_importance(&data)?
    } else if method == "shapley" || method.starts_with("shapley:") {
        let perms = match method.strip_prefix("shapley:") {
            Some(n) => n.parse::<usize>().map_err(|e| {
                Error::Schema(format!("method 'shapley:{n}': bad permutation count: {e}"))
            })?,
            None => 200,
        };
        let model_path: PathBuf = args.require("model")?;
        let (model, _) = load_model(&model_path)?;
        inputs.push(model_path);
        shapley_importance(&model, &data, perms, seed)?
    } else {
        return Err(Error::Schema(format!(
            "method must be 'pearson' or 'shapley[:permutations]', got '{method}'"
        )));
    };

    write_atomic(&out, importance_to_csv_string(data.feature_names(), &imp).as_bytes())?;
    let top = imp
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| format!("{} ({:.4})", data.feature_names()[i], v))
        .unwrap_or_default();
    let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    save_manifest("importance", &args, &input_refs, &[&out], &manifest)?;
    println!("importance: method={} top={} -> {}", method, top, out.display());
    Ok(())
}

// ---------------------------------------------------------------------

impl ArgMap {
    /// Budget norm order, defaulting to Euclidean.
    fn require_p(&mut self) -> Result<PNorm> {
        self.or_default("p", "2".to_string())?;
        self.require::<PNorm>("p")
    }
}

