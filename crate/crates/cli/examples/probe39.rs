use tsa_cli::case_file::load_case;
use tsa_core::gin::{ModelConfig, Pooling};
use tsa_core::graph::make_folds;
use tsa_core::rng::child_seed;
use tsa_core::scenario::{sample_scenario, ScenarioConfig};
use tsa_core::train::{run_fold, summarize_folds, TrainConfig};
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let hidden: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(32);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(60);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let nsamp: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let folds: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(10);
    let batch: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(32);

    let case = load_case("ieee39").unwrap();
    let cfg = ScenarioConfig::default();
    let samples: Vec<_> = (0..nsamp).into_par_iter().map(|i| {
        sample_scenario(&case, child_seed(42, i as u64), &cfg).unwrap().sample
    }).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let plan = make_folds(&labels, folds, 42).unwrap();
    for pooling in [Pooling::Dal, Pooling::Mean, Pooling::Sum] {
        let t0 = Instant::now();
        let tc = TrainConfig {
            model: ModelConfig { in_dim: 2, hidden, layers: 4, epsilon: 0.0, pooling },
            epochs, batch_size: batch, lr, seed: 42, val_fraction: 0.1,
        };
        let per_fold: Vec<_> = (0..plan.k).into_par_iter().map(|f| {
            run_fold(&samples, &plan, &tc, f).unwrap().1
        }).collect();
        let (mean, std) = summarize_folds(&per_fold);
        println!("h{hidden} e{epochs} lr{lr} b{batch} n{nsamp} k{folds}: {pooling}: acc {:.2}+-{:.2} f1 {:.2} tnr {:.2} tpr {:.2}  ({:.0}s)",
            100.0*mean.acc, 100.0*std.acc, 100.0*mean.f1, 100.0*mean.tnr, 100.0*mean.tpr, t0.elapsed().as_secs_f64());
    }
}
