//! Command-line surface.
//!
//! Flags parse through clap into option fields; whatever a flag left unset
//! falls back to the `--config` file, then to built-in defaults inside the
//! exec layer. Exit codes: 0 success, 1 usage error, 2 data error, 3
//! numeric failure.

mod args;
mod commands;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use args::ArgMap;

const OMEGA_HELP: &str = "Weighting transform spec: identity | pearson | \
shapley[:permutations] | md | md-target | mask:<name,name,...> | import:<file> \
(.json transform file or feature_name,importance CSV)";

#[derive(Parser)]
#[command(
    name = "nuadv",
    version,
    about = "Attacks, defenses, and certification for tabular ReLU classifiers \
             under feature-weighted perturbation budgets"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a raw CSV, split train/test, standardize, write both splits.
    Prepare {
        /// Raw input CSV with a header row.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Name of the binary label column.
        #[arg(long)]
        label: Option<String>,
        /// Comma-separated columns to discard (identifiers, categoricals).
        #[arg(long)]
        drop: Option<String>,
        /// Fraction of rows in the test split (default 0.3).
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Standardized training-split CSV to write.
        #[arg(long)]
        out_train: Option<PathBuf>,
        /// Standardized test-split CSV to write.
        #[arg(long)]
        out_test: Option<PathBuf>,
        /// Optional JSON file for the fitted means and deviations.
        #[arg(long)]
        out_stats: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// key = value file consulted for flags not given here.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a classifier, cleanly or adversarially.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, help = OMEGA_HELP)]
        omega: Option<String>,
        /// Perturbation radius; omit (with no --match-l2) for clean training.
        #[arg(long, conflicts_with = "match_l2")]
        epsilon: Option<f64>,
        /// Calibrate epsilon so the mean attack L2 norm hits this target.
        #[arg(long)]
        match_l2: Option<f64>,
        /// Budget norm order: 2 | inf (default 2).
        #[arg(long)]
        p: Option<String>,
        /// PGD steps during training attacks (default 40).
        #[arg(long)]
        steps: Option<usize>,
        /// PGD step size (default epsilon / 4).
        #[arg(long)]
        step_size: Option<f64>,
        /// PGD start: zero | random (default zero).
        #[arg(long)]
        init: Option<String>,
        /// Fraction of the target class perturbed per epoch (default 0.9).
        #[arg(long)]
        fraction: Option<f64>,
        /// Class whose samples are attacked during training (default 1).
        #[arg(long)]
        target_class: Option<usize>,
        /// Comma-separated hidden layer widths (default 16).
        #[arg(long)]
        hidden: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Dropout rate; 0 disables (default 0).
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Clean model backing shapley importances and budget calibration;
        /// trained internally when needed but not given.
        #[arg(long)]
        ref_model: Option<PathBuf>,
        /// Uniform L2 cap stacked on the weighted budget (combo defense).
        #[arg(long)]
        combo_epsilon: Option<f64>,
        /// Model JSON to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also save the constructed weighting transform here.
        #[arg(long)]
        out_omega: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run PGD over a dataset and write per-sample results.
    Attack {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, help = OMEGA_HELP)]
        omega: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Attack only samples of this class (default: all).
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        combo_epsilon: Option<f64>,
        /// Per-sample attack CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Deterministic robustness certificates from the dual bound.
    CertifyLp {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, help = OMEGA_HELP)]
        omega: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Randomized-smoothing certificates with Gaussian noise.
    CertifySmooth {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// Noise shape source; the covariance is sigma^2 (Omega^T Omega)^{-1}.
        #[arg(long, help = OMEGA_HELP)]
        omega: Option<String>,
        /// Noise scale multiplier (default 1).
        #[arg(long)]
        sigma: Option<f64>,
        /// Headerless d x d covariance CSV overriding --omega.
        #[arg(long)]
        noise_cov: Option<PathBuf>,
        /// Candidate-selection draws (default 100).
        #[arg(long)]
        n0: Option<usize>,
        /// Estimation draws (default 10000).
        #[arg(long)]
        n: Option<usize>,
        /// Confidence level of the vote bound (default 0.001).
        #[arg(long)]
        alpha: Option<f64>,
        /// Mahalanobis radius a correct prediction must certify to count.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Gaussian plausibility of recorded attack perturbations.
    Consistency {
        /// Attack CSV whose delta_<i> columns hold the perturbations.
        #[arg(long)]
        deltas: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[arg(long, help = OMEGA_HELP)]
        omega: Option<String>,
        /// Headerless d x d covariance CSV overriding --omega.
        #[arg(long)]
        cov_file: Option<PathBuf>,
        /// Model file (needed only for shapley omega).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report the fraction of perturbations inside this budget.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Histogram CSV (bin_low, bin_high, count) to write.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Per-feature importance scores as a two-column CSV.
    Importance {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        /// pearson | shapley[:permutations] (default pearson).
        #[arg(long)]
        method: Option<String>,
        /// Model file (required for shapley).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-run a recorded manifest and verify outputs are bit-identical.
    Replay {
        /// Manifest JSON written by a previous run.
        manifest: PathBuf,
    },
}

/// Collect explicitly provided flags, merge the config file, dispatch.
fn prepare_args(pairs: Vec<(&str, Option<String>)>, config: Option<PathBuf>) -> Result<ArgMap, nuadv::Error> {
    let mut map = ArgMap::new();
    for (key, value) in pairs {
        map.set_opt(key, &value);
    }
    if let Some(path) = config {
        map.merge_config(&path)?;
    }
    Ok(map)
}

fn opt_string(v: &Option<impl std::fmt::Display>) -> Option<String> {
    v.as_ref().map(|x| x.to_string())
}

fn path_string(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn execute(cmd: Cmd) -> Result<(), nuadv::Error> {
    match cmd {
        Cmd::Prepare {
            data,
            label,
            drop,
            test_fraction,
            seed,
            out_train,
            out_test,
            out_stats,
            manifest,
            config,
        } => {
            let map = prepare_args(
                vec![
                    ("data", path_string(&data)),
                    ("label", label),
                    ("drop", drop),
                    ("test-fraction", opt_string(&test_fraction)),
                    ("seed", opt_string(&seed)),
                    ("out-train", path_string(&out_train)),
                    ("out-test", path_string(&out_test)),
                    ("out-stats", path_string(&out_stats)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("prepare", map)
        }
        Cmd::Train {
            data,
            label,
            omega,
            epsilon,
            match_l2,
            p,
            steps,
            step_size,
            init,
            fraction,
            target_class,
            hidden,
            epochs,
            batch_size,
            learning_rate,
            dropout,
            seed,
            ref_model,
            combo_epsilon,
            out,
            out_omega,
            manifest,
            config,
        } => {
            let map = prepare_args(
                vec![
                    ("data", path_string(&data)),
                    ("label", label),
                    ("omega", omega),
                    ("epsilon", opt_string(&epsilon)),
                    ("match-l2", opt_string(&match_l2)),
                    ("p", p),
                    ("steps", opt_string(&steps)),
                    ("step-size", opt_string(&step_size)),
                    ("init", init),
                    ("fraction", opt_string(&fraction)),
                    ("target-class", opt_string(&target_class)),
                    ("hidden", hidden),
                    ("epochs", opt_string(&epochs)),
                    ("batch-size", opt_string(&batch_size)),
                    ("learning-rate", opt_string(&learning_rate)),
                    ("dropout", opt_string(&dropout)),
                    ("seed", opt_string(&seed)),
                    ("ref-model", path_string(&ref_model)),
                    ("combo-epsilon", opt_string(&combo_epsilon)),
                    ("out", path_string(&out)),
                    ("out-omega", path_string(&out_omega)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("train", map)
        }
        Cmd::Attack {
            model,
            data,
            label,
            omega,
            epsilon,
            p,
            steps,
            step_size,
            init,
            seed,
            class,
            combo_epsilon,
            out,
            manifest,
            config,
        } => {
            let map = prepare_args(
                vec![
                    ("model", path_string(&model)),
                    ("data", path_string(&data)),
                    ("label", label),
                    ("omega", omega),
                    ("epsilon", opt_string(&epsilon)),
                    ("p", p),
                    ("steps", opt_string(&steps)),
                    ("step-size", opt_string(&step_size)),
                    ("init", init),
                    ("seed", opt_string(&seed)),
                    ("class", opt_string(&class)),
                    ("combo-epsilon", opt_string(&combo_epsilon)),
                    ("out", path_string(&out)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("attack", map)
        }
        Cmd::CertifyLp { model, data, label, omega, epsilon, p, seed, out, manifest, config } => {
            let map = prepare_args(
                vec![
                    ("model", path_string(&model)),
                    ("data", path_string(&data)),
                    ("label", label),
                    ("omega", omega),
                    ("epsilon", opt_string(&epsilon)),
                    ("p", p),
                    ("seed", opt_string(&seed)),
                    ("out", path_string(&out)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("certify-lp", map)
        }
        Cmd::CertifySmooth {
            model,
            data,
            label,
            omega,
            sigma,
            noise_cov,
            n0,
            n,
            alpha,
            radius,
            seed,
            out,
            manifest,
            config,
        } => {
            let map = prepare_args(
                vec![
                    ("model", path_string(&model)),
                    ("data", path_string(&data)),
                    ("label", label),
                    ("omega", omega),
                    ("sigma", opt_string(&sigma)),
                    ("noise-cov", path_string(&noise_cov)),
                    ("n0", opt_string(&n0)),
                    ("n", opt_string(&n)),
                    ("alpha", opt_string(&alpha)),
                    ("radius", opt_string(&radius)),
                    ("seed", opt_string(&seed)),
                    ("out", path_string(&out)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("certify-smooth", map)
        }
        Cmd::Consistency {
            deltas,
            data,
            label,
            omega,
            cov_file,
            model,
            epsilon,
            seed,
            out,
            manifest,
            config,
        } => {
            let map = prepare_args(
                vec![
                    ("deltas", path_string(&deltas)),
                    ("data", path_string(&data)),
                    ("label", label),
                    ("omega", omega),
                    ("cov-file", path_string(&cov_file)),
                    ("model", path_string(&model)),
                    ("epsilon", opt_string(&epsilon)),
                    ("seed", opt_string(&seed)),
                    ("out", path_string(&out)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("consistency", map)
        }
        Cmd::Importance { data, label, method, model, seed, out, manifest, config } => {
            let map = prepare_args(
                vec![
                    ("data", path_string(&data)),
                    ("label", label),
                    ("method", method),
                    ("model", path_string(&model)),
                    ("seed", opt_string(&seed)),
                    ("out", path_string(&out)),
                    ("manifest", path_string(&manifest)),
                ],
                config,
            )?;
            commands::dispatch("importance", map)
        }
        Cmd::Replay { manifest } => commands::exec_replay(&manifest),
    }
}

/// Top-level entry: returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help and --version are parse "errors" with success semantics.
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
