//! Scratch calibration driver used while pinning experiment budgets.
//! Run as: cargo run --release --example calibrate -- <cmd> [args]

use std::path::Path;
use std::time::Instant;

use sparserob_core::attacks::CwConfig;
use sparserob_core::data::{digit_class, filter_pair, load_mnist_split, Dataset, MnistSplit};
use sparserob_core::nn::{init_weights, save_checkpoint, sgd_train, Network, TrainConfig};
use sparserob_core::robustness::{evaluate_r_2, evaluate_r_inf, L2Attack, LinfAttack};
use sparserob_core::sparsity::{
    activation_sparsity, progressive_pipeline, weight_sparsity, PruneSchedule,
};

fn mnist(split: MnistSplit) -> Dataset {
    load_mnist_split(Path::new("data/mnist"), split).expect("mnist data")
}

fn accuracy(net: &Network, ds: &Dataset) -> f64 {
    let preds = net.predict_dataset(ds).unwrap();
    let correct = preds
        .iter()
        .zip(ds.labels())
        .filter(|(p, y)| p == y)
        .count();
    correct as f64 / ds.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cmd = args.first().map(String::as_str).unwrap_or("help");
    let t0 = Instant::now();
    match cmd {
        "linear17" => {
            let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5000);
            let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
            let train = filter_pair(&mnist(MnistSplit::Train), digit_class(1), digit_class(7))
                .unwrap();
            let eval =
                filter_pair(&mnist(MnistSplit::Test), digit_class(1), digit_class(7)).unwrap();
            let mut net = Network::linear(784, 1);
            init_weights(&mut net, seed);
            let cfg = TrainConfig {
                iterations: iters,
                seed,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &train, &cfg).unwrap();
            let acc = accuracy(&net, &eval);
            println!("train done {:?} acc {:.4}", t0.elapsed(), acc);
            let df = evaluate_r_2(&net, &eval, &L2Attack::default()).unwrap();
            println!(
                "deepfool r2 {:.4} evaluated {} failures {} [{:?}]",
                df.mean_distance,
                df.evaluated,
                df.failures,
                t0.elapsed()
            );
            let cw = evaluate_r_2(&net, &eval, &L2Attack::CarliniWagner(CwConfig::default()))
                .unwrap();
            println!(
                "cw r2 {:.4} evaluated {} failures {} [{:?}]",
                cw.mean_distance,
                cw.evaluated,
                cw.failures,
                t0.elapsed()
            );
        }
        "multiclass" => {
            let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(20000);
            let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
            let train = mnist(MnistSplit::Train);
            let eval = mnist(MnistSplit::Test);
            let mut net = Network::linear(784, 10);
            init_weights(&mut net, seed);
            let cfg = TrainConfig {
                iterations: iters,
                seed,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &train, &cfg).unwrap();
            println!(
                "multiclass acc {:.4} [{:?}]",
                accuracy(&net, &eval),
                t0.elapsed()
            );
        }
        "figure1" => {
            let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
            let retrain: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2500);
            let train = filter_pair(&mnist(MnistSplit::Train), digit_class(1), digit_class(7))
                .unwrap();
            let eval =
                filter_pair(&mnist(MnistSplit::Test), digit_class(1), digit_class(7)).unwrap();
            let mut net = Network::linear(784, 1);
            init_weights(&mut net, seed);
            let cfg = TrainConfig {
                iterations: 2500,
                seed,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &train, &cfg).unwrap();
            let schedule = PruneSchedule {
                rounds: 16,
                fraction: 1.0 / 3.0,
                retrain_iterations: retrain,
                layers_in_scope: None,
            };
            let dir = std::env::temp_dir().join(format!("fig1_seed{seed}"));
            let run = progressive_pipeline(&net, &train, &schedule, &cfg, &dir).unwrap();
            println!("round sparsity acc r_inf r2_df  [seed {seed}]");
            for stage in &run.stages {
                let acc = accuracy(&stage.net, &eval);
                let ri =
                    evaluate_r_inf(&stage.net, &eval, LinfAttack::Fgs, 0.1).unwrap();
                let r2 = evaluate_r_2(&stage.net, &eval, &L2Attack::default())
                    .map(|r| r.mean_distance)
                    .unwrap_or(f64::NAN);
                println!(
                    "{:2}    {:.4}  {:.4} {:.4} {:.4}",
                    stage.round, stage.sparsity, acc, ri, r2
                );
            }
            println!("total {:?}", t0.elapsed());
        }
        "lenet" => {
            let iters: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(8000);
            let lambda: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
            let subset: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1000);
            let train = mnist(MnistSplit::Train);
            let eval_full = mnist(MnistSplit::Test);
            let idx: Vec<usize> = (0..subset.min(eval_full.len())).collect();
            let eval = eval_full.subset(&idx).unwrap();
            let mut net = Network::mlp(&[784, 300, 100, 10]).unwrap();
            init_weights(&mut net, seed);
            let cfg = TrainConfig {
                iterations: iters,
                seed,
                activation_l1_lambda: lambda,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &train, &cfg).unwrap();
            let acc = accuracy(&net, &eval_full);
            let act_s = activation_sparsity(&net, &eval).unwrap();
            println!(
                "lenet iters {iters} lambda {lambda} seed {seed}: acc {:.4} act_sparsity {:.4} [{:?}]",
                acc,
                act_s,
                t0.elapsed()
            );
            let ri = evaluate_r_inf(&net, &eval, LinfAttack::Fgs, 0.1).unwrap();
            let r2 = evaluate_r_2(&net, &eval, &L2Attack::default()).unwrap();
            println!(
                "r_inf {:.4} r2 {:.4} (failures {}) [{:?}]",
                ri,
                r2.mean_distance,
                r2.failures,
                t0.elapsed()
            );
            let ckpt = std::env::temp_dir().join(format!(
                "lenet_i{iters}_l{lambda}_s{seed}.ckpt"
            ));
            save_checkpoint(&net, Some(&cfg), &ckpt).unwrap();
            println!("saved {}", ckpt.display());
        }
        "lenetpipe" => {
            let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
            let dense_iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8000);
            let retrain: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(3000);
            let rounds: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(12);
            let subset: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1000);
            let train = mnist(MnistSplit::Train);
            let eval_full = mnist(MnistSplit::Test);
            let idx: Vec<usize> = (0..subset.min(eval_full.len())).collect();
            let eval = eval_full.subset(&idx).unwrap();
            let mut net = Network::mlp(&[784, 300, 100, 10]).unwrap();
            init_weights(&mut net, seed);
            let cfg = TrainConfig {
                iterations: dense_iters,
                seed,
                ..TrainConfig::default()
            };
            sgd_train(&mut net, &train, &cfg).unwrap();
            println!("dense trained [{:?}]", t0.elapsed());
            let schedule = PruneSchedule {
                rounds,
                fraction: 1.0 / 3.0,
                retrain_iterations: retrain,
                layers_in_scope: None,
            };
            let dir = std::env::temp_dir().join(format!("lenetpipe_seed{seed}"));
            let run = progressive_pipeline(&net, &train, &schedule, &cfg, &dir).unwrap();
            println!("round sparsity acc r_inf r2_df  [seed {seed}]");
            for stage in &run.stages {
                let acc = accuracy(&stage.net, &eval_full);
                let ri =
                    evaluate_r_inf(&stage.net, &eval, LinfAttack::Fgs, 0.1).unwrap();
                let r2 = evaluate_r_2(&stage.net, &eval, &L2Attack::default())
                    .map(|r| r.mean_distance)
                    .unwrap_or(f64::NAN);
                println!(
                    "{:2}    {:.4}  {:.4} {:.4} {:.4}  [{:?}]",
                    stage.round,
                    stage.sparsity,
                    acc,
                    ri,
                    r2,
                    t0.elapsed()
                );
            }
            let _ = weight_sparsity(&run.stages.last().unwrap().net);
            println!("total {:?}", t0.elapsed());
        }
        other => {
            eprintln!("unknown calibration command: {other}");
            std::process::exit(2);
        }
    }
}
