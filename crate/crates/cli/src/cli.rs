//! Command-line surface: one binary, one subcommand per pipeline stage.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use tsa_core::dynamics::{
    assess_trajectory, prepare_dynamics, simulate, FaultSpec, LineEnd, SimOptions,
};
use tsa_core::gin::{gin_forward, ModelConfig, Pooling, TsaModel};
use tsa_core::graph::make_folds;
use tsa_core::metrics::threshold_grid;
use tsa_core::pooling::{dal_pool_data, spectral_check};
use tsa_core::powerflow::solve_power_flow;
use tsa_core::rng::child_seed;
use tsa_core::scenario::ScenarioConfig;
use tsa_core::train::{
    evaluate, run_fold, summarize_folds, train_fold, CvReport, Prediction, TrainConfig,
};

use crate::assess::batch_assess;
use crate::case_file::load_case;
use crate::checkpoint::{load_model, save_model};
use crate::dataset_file::read_dataset;
use crate::generate::generate_dataset;
use crate::report::{assess_csv, cr_curve_csv, cv_report_csv, feature_histogram_csv, trajectory_csv};

#[derive(Debug, Parser)]
#[command(
    name = "tsa",
    version,
    about = "Transient stability assessment: simulate faults, build graph datasets, train a \
             covariance-pooled GNN, and run credibility-gated online assessment"
)]
pub struct Cli {
    /// Master seed for anything randomized.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads for generation, training, and assessment
    /// (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EndArg {
    From,
    To,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one fault simulation and export the rotor trajectory as CSV.
    Simulate {
        /// Case file path or bundled name (ieee39, wscc9, smib2, case2).
        #[arg(long)]
        case: String,
        /// Index of the faulted line.
        #[arg(long)]
        line: usize,
        /// Faulted terminal of the line.
        #[arg(long, value_enum, default_value = "from")]
        end: EndArg,
        /// Fault clearing time in seconds.
        #[arg(long)]
        clear_time: f64,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.005)]
        dt: f64,
        /// Output CSV path (header: t,delta_1..delta_g,omega_1..omega_g).
        #[arg(long)]
        out: PathBuf,
    },

    /// Sample, simulate, and label scenarios into a binary dataset.
    GenDataset {
        #[arg(long)]
        case: String,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },

    /// Emit per-feature histograms of a dataset as CSV.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Cross-validate, then fit a final model on the full dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Readout: dal, mean, or sum.
        #[arg(long, default_value = "dal")]
        pool: String,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Checkpoint path for the final model.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fold metrics CSV (fold rows plus mean/std).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Credibility-rating curve CSV over out-of-fold predictions.
        #[arg(long)]
        cr_report: Option<PathBuf>,
    },

    /// Evaluate a saved model on a dataset.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },

    /// Print pooled covariance spectra and the reconstruction residual
    /// of the weighted-mean identity for dataset samples.
    Diagnose {
        #[arg(long)]
        data: PathBuf,
        /// Pool GIN embeddings from this model; raw features when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },

    /// Credibility-gated online assessment with TDS fallback and timing.
    Assess {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        case: String,
        /// Replay the scenarios of this dataset (by stored seed).
        #[arg(long, conflicts_with = "count")]
        scenarios: Option<PathBuf>,
        /// Draw this many fresh scenarios from the master seed instead.
        #[arg(long)]
        count: Option<usize>,
        /// Margin threshold of the credibility gate.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Per-scenario CSV report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_or_print(path: Option<&PathBuf>, content: &str, what: &str) -> Result<()> {
    match path {
        Some(p) => {
            std::fs::write(p, content).with_context(|| format!("writing {what} {}", p.display()))?;
            eprintln!("wrote {what} to {}", p.display());
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

/// Dispatch one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate {
            case,
            line,
            end,
            clear_time,
            horizon,
            dt,
            out,
        } => {
            let case = load_case(&case)?;
            if line >= case.lines.len() {
                bail!("line index {line} out of range ({} lines)", case.lines.len());
            }
            let fault = FaultSpec {
                line_index: line,
                faulted_end: match end {
                    EndArg::From => LineEnd::From,
                    EndArg::To => LineEnd::To,
                },
                clear_time,
            };
            let pf = solve_power_flow(&case, 1e-8, 20)?;
            let model = prepare_dynamics(&case, &pf, Some(&fault))?;
            let traj = simulate(
                &model,
                &SimOptions {
                    clear_time,
                    horizon,
                    dt,
                    early_exit: false,
                },
            );
            let verdict = assess_trajectory(&traj);
            std::fs::write(&out, trajectory_csv(&traj))
                .with_context(|| format!("writing trajectory {}", out.display()))?;
            println!(
                "label {} (tsi {:.2}, max separation {:.1} deg), {} steps -> {}",
                verdict.label,
                verdict.tsi,
                verdict.max_sep_deg,
                traj.times.len(),
                out.display()
            );
            Ok(())
        }

        Command::GenDataset { case, samples, out } => {
            if samples == 0 {
                bail!("--samples must be at least 1");
            }
            let case = load_case(&case)?;
            let summary =
                generate_dataset(&case, samples, seed, &ScenarioConfig::default(), &out)?;
            println!("{summary} -> {}", out.display());
            Ok(())
        }

        Command::Stats { data, bins, out } => {
            let samples = read_dataset(&data)?;
            write_or_print(out.as_ref(), &feature_histogram_csv(&samples, bins), "histograms")
        }

        Command::Train {
            data,
            pool,
            layers,
            hidden,
            epochs,
            lr,
            batch_size,
            folds,
            val_fraction,
            out,
            report,
            cr_report,
        } => {
            let samples = read_dataset(&data)?;
            let pooling: Pooling = pool.parse().map_err(anyhow::Error::msg)?;
            let cfg = TrainConfig {
                model: ModelConfig {
                    in_dim: 2,
                    hidden,
                    layers,
                    epsilon: 0.0,
                    pooling,
                },
                epochs,
                batch_size,
                lr,
                seed,
                val_fraction,
            };
            let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
            let plan = make_folds(&labels, folds, seed)?;

            // folds train in parallel; each is deterministic on its own
            let fold_runs: Result<Vec<_>> = (0..plan.k)
                .into_par_iter()
                .map(|fold| {
                    let (model, metrics) = run_fold(&samples, &plan, &cfg, fold)?;
                    // out-of-fold predictions for the credibility curve
                    let test: Vec<&tsa_core::graph::GraphSample> =
                        plan.fold_indices(fold).into_iter().map(|i| &samples[i]).collect();
                    let (_, preds) = evaluate(&model, &test);
                    Ok((metrics, preds))
                })
                .collect();
            let fold_runs = fold_runs?;
            let per_fold: Vec<_> = fold_runs.iter().map(|(m, _)| m.clone()).collect();
            let (mean, std) = summarize_folds(&per_fold);
            let cv = CvReport {
                per_fold,
                mean,
                std,
            };

            println!("{}-fold cross-validation ({pooling} pooling, {layers} layers, {hidden} hidden):", plan.k);
            println!(
                "  acc {:.2} +- {:.2}   f1 {:.2} +- {:.2}   tnr {:.2} +- {:.2}   tpr {:.2} +- {:.2}",
                100.0 * cv.mean.acc,
                100.0 * cv.std.acc,
                100.0 * cv.mean.f1,
                100.0 * cv.std.f1,
                100.0 * cv.mean.tnr,
                100.0 * cv.std.tnr,
                100.0 * cv.mean.tpr,
                100.0 * cv.std.tpr
            );
            if let Some(path) = &report {
                std::fs::write(path, cv_report_csv(&cv))
                    .with_context(|| format!("writing report {}", path.display()))?;
                eprintln!("wrote fold report to {}", path.display());
            }
            if let Some(path) = &cr_report {
                let oof: Vec<&Prediction> = fold_runs.iter().flat_map(|(_, p)| p).collect();
                let correct: Vec<bool> = oof.iter().map(|p| p.correct()).collect();
                let margins: Vec<f64> = oof.iter().map(|p| p.margin).collect();
                let curve = tsa_core::metrics::cr_curve_from_predictions(
                    &correct,
                    &margins,
                    &threshold_grid(100),
                )?;
                std::fs::write(path, cr_curve_csv(&curve))
                    .with_context(|| format!("writing CR curve {}", path.display()))?;
                eprintln!("wrote credibility curve to {}", path.display());
            }

            if let Some(path) = &out {
                // final deployable model fitted on everything, with a
                // stratified validation split for best-epoch selection
                let indices: Vec<usize> = (0..samples.len()).collect();
                let (train_idx, val_idx) = tsa_core::train::split_train_val(
                    &indices,
                    &labels,
                    val_fraction,
                    child_seed(seed, 999),
                );
                let train: Vec<&tsa_core::graph::GraphSample> =
                    train_idx.iter().map(|&i| &samples[i]).collect();
                let val: Vec<&tsa_core::graph::GraphSample> =
                    val_idx.iter().map(|&i| &samples[i]).collect();
                let (final_model, val_metrics) = train_fold(&train, &val, &cfg)?;
                save_model(path, &final_model)?;
                println!(
                    "final model: val acc {:.2} -> {}",
                    100.0 * val_metrics.acc,
                    path.display()
                );
            }
            Ok(())
        }

        Command::Evaluate {
            model,
            data,
            report,
        } => {
            let model = load_model(&model)?;
            let samples = read_dataset(&data)?;
            let refs: Vec<&tsa_core::graph::GraphSample> = samples.iter().collect();
            let (metrics, _) = evaluate(&model, &refs);
            println!(
                "acc {:.2}  f1 {:.2}  tnr {:.2}  tpr {:.2}  (tp {} tn {} fp {} fn {})",
                100.0 * metrics.acc,
                100.0 * metrics.f1,
                100.0 * metrics.tnr,
                100.0 * metrics.tpr,
                metrics.tp,
                metrics.tn,
                metrics.fp,
                metrics.fn_
            );
            if let Some(path) = report {
                let content = format!(
                    "split,acc,f1,tnr,tpr\nall,{:.4},{:.4},{:.4},{:.4}\n",
                    100.0 * metrics.acc,
                    100.0 * metrics.f1,
                    100.0 * metrics.tnr,
                    100.0 * metrics.tpr
                );
                std::fs::write(&path, content)
                    .with_context(|| format!("writing report {}", path.display()))?;
            }
            Ok(())
        }

        Command::Diagnose { data, model, count } => {
            let samples = read_dataset(&data)?;
            let model: Option<TsaModel> = match model {
                Some(p) => Some(load_model(&p)?),
                None => None,
            };
            for (i, sample) in samples.iter().take(count).enumerate() {
                let h = match &model {
                    Some(m) => gin_forward(m, sample),
                    None => sample.features.clone(),
                };
                let pooled = dal_pool_data(&h);
                let diag = spectral_check(&pooled)?;
                let znorm: f64 =
                    pooled.z.iter().map(|v| v * v).sum::<f64>().sqrt();
                let show = diag.eigenvalues.len().min(8);
                println!(
                    "sample {i} (label {}): rank {}/{}, |z| {:.4e}, residual {:.3e}, ortho {:.3e}",
                    sample.label,
                    diag.rank,
                    diag.eigenvalues.len(),
                    znorm,
                    diag.residual,
                    diag.ortho_error
                );
                let head: Vec<String> = diag.eigenvalues[..show]
                    .iter()
                    .map(|l| format!("{l:.4e}"))
                    .collect();
                println!("  eigenvalues: {}{}", head.join(" "), if show < diag.eigenvalues.len() { " ..." } else { "" });
            }
            Ok(())
        }

        Command::Assess {
            model,
            case,
            scenarios,
            count,
            threshold,
            report,
        } => {
            let model = load_model(&model)?;
            let case = load_case(&case)?;
            let seeds: Vec<u64> = match (&scenarios, count) {
                (Some(path), _) => read_dataset(path)?.iter().map(|s| s.meta.seed).collect(),
                (None, Some(n)) => (0..n as u64).map(|i| child_seed(seed, i)).collect(),
                (None, None) => bail!("pass either --scenarios <dataset> or --count <n>"),
            };
            if seeds.is_empty() {
                bail!("no scenarios to assess");
            }
            let batch =
                batch_assess(&model, &case, &seeds, threshold, &ScenarioConfig::default())?;
            println!("{batch}");
            if let Some(path) = report {
                std::fs::write(&path, assess_csv(&batch))
                    .with_context(|| format!("writing report {}", path.display()))?;
                eprintln!("wrote per-scenario report to {}", path.display());
            }
            Ok(())
        }
    }
}
