//! Experiment configuration: a flat TOML file, fully validated at load
//! time, with command-line overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use sparserob_core::attacks::CwConfig;
use sparserob_core::data::{
    digit_class, filter_pair, load_mnist_split, resolve_data_root, synth_gaussians, Dataset,
    MnistSplit, DATA_ROOT_ENV,
};
use sparserob_core::nn::{init_weights, Network, TrainConfig};
use sparserob_core::robustness::{L2Attack, LinfAttack};
use sparserob_core::rng::derive_seed;
use sparserob_core::sparsity::PruneSchedule;
use sparserob_core::tensor::{PNorm, Tensor};

use crate::CliError;

/// The experiment stages a config can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Train,
    PruneSweep,
    AttackEval,
    LipschitzEval,
    TheoremCheck,
    FullFigure,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// "mnist" (10-class), "mnist_pair" (two digits as a binary task), or
    /// "synth" (two Gaussian blobs).
    pub kind: String,
    /// MNIST root; falls back to the SPARSE_ROB_DATA environment variable.
    pub data_root: Option<PathBuf>,
    /// The two digits of a "mnist_pair" task (default [1, 7]).
    pub digits: Option<[u8; 2]>,
    /// Synth blob parameters.
    pub mu_plus: Option<Vec<f64>>,
    pub mu_minus: Option<Vec<f64>>,
    pub sigma: Option<f64>,
    pub n_per_class: Option<usize>,
    pub eval_n_per_class: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// "linear", "lenet300", "lenet5", or "custom".
    pub kind: String,
    /// Hidden/output widths for "custom" (input width is taken from the
    /// dataset), e.g. [300, 100, 10].
    pub dims: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub lr_gamma: Option<f64>,
    pub lr_power: Option<f64>,
    pub activation_l1_lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub rounds: Option<usize>,
    pub fraction: Option<f64>,
    pub retrain_iterations: Option<usize>,
    pub layers_in_scope: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    /// "fgs", "rfgs", "deepfool", or "cw".
    pub kind: String,
    pub eps: Option<f64>,
    pub max_iter: Option<usize>,
    pub overshoot: Option<f64>,
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    pub binary_search_rounds: Option<usize>,
    pub c_init: Option<f64>,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Evaluate attacks on the first `subset` eval examples (0 = all).
    pub subset: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LipschitzSpec {
    /// Attack-norm exponent q ∈ {1, 2}.
    pub q: Option<u8>,
    pub radius: Option<f64>,
    pub probe_count: Option<usize>,
    pub mask_samples: Option<usize>,
    pub alphas: Option<Vec<f64>>,
    /// How many eval examples to certify.
    pub examples: Option<usize>,
}

/// The on-disk (TOML) experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Option<Task>,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Directory of checkpoints for tasks that evaluate existing models.
    pub models_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub lipschitz: LipschitzSpec,
}

/// Command-line overrides for the most commonly swept fields; `None`
/// leaves the file value in place.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub data_root: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
    pub iterations: Option<usize>,
    pub rounds: Option<usize>,
    pub retrain_iterations: Option<usize>,
    pub subset: Option<usize>,
    pub activation_l1_lambda: Option<f64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(dir) = &ov.output_dir {
            self.output_dir = dir.clone();
        }
        if let Some(seeds) = &ov.seeds {
            self.seeds = seeds.clone();
        }
        if let Some(root) = &ov.data_root {
            self.dataset.data_root = Some(root.clone());
        }
        if let Some(dir) = &ov.models_dir {
            self.models_dir = Some(dir.clone());
        }
        if let Some(n) = ov.iterations {
            self.train.iterations = Some(n);
        }
        if let Some(n) = ov.rounds {
            self.schedule.rounds = Some(n);
        }
        if let Some(n) = ov.retrain_iterations {
            self.schedule.retrain_iterations = Some(n);
        }
        if let Some(n) = ov.subset {
            self.eval.subset = Some(n);
        }
        if let Some(l) = ov.activation_l1_lambda {
            self.train.activation_l1_lambda = Some(l);
        }
    }

    /// Validates everything checkable without running: seed list, enum
    /// fields, parameter ranges, and that every referenced path resolves.
    pub fn validate(&self, task: Task) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must be nonempty".into()));
        }
        match self.dataset.kind.as_str() {
            "mnist" | "mnist_pair" => {
                let root = self.mnist_root()?;
                for split in [MnistSplit::Train, MnistSplit::Test] {
                    let (images, labels) = split.file_names();
                    for name in [images, labels] {
                        let p = root.join(name);
                        if !p.is_file() {
                            return Err(CliError::Config(format!(
                                "MNIST file not found: {}",
                                p.display()
                            )));
                        }
                    }
                }
                if self.dataset.kind == "mnist_pair" {
                    let [a, b] = self.digits();
                    if a == b || a > 9 || b > 9 {
                        return Err(CliError::Config(format!(
                            "mnist_pair digits must be two distinct digits, got [{a}, {b}]"
                        )));
                    }
                }
            }
            "synth" => {
                let mp = self.dataset.mu_plus.as_ref();
                let mm = self.dataset.mu_minus.as_ref();
                match (mp, mm) {
                    (Some(p), Some(m)) if p.len() == m.len() && !p.is_empty() => {}
                    _ => {
                        return Err(CliError::Config(
                            "synth dataset needs mu_plus and mu_minus of equal length".into(),
                        ))
                    }
                }
                if self.dataset.sigma.unwrap_or(1.0) <= 0.0 {
                    return Err(CliError::Config("synth sigma must be positive".into()));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown dataset kind {other:?} (expected mnist, mnist_pair, or synth)"
                )))
            }
        }
        match self.model.kind.as_str() {
            "linear" | "lenet300" | "lenet5" => {}
            "custom" => {
                if self.model.dims.as_ref().is_none_or(|d| d.is_empty()) {
                    return Err(CliError::Config(
                        "custom model needs a nonempty dims list".into(),
                    ));
                }
            }
            other => {
                return Err(CliError::Config(format!(
                    "unknown model kind {other:?} (expected linear, lenet300, lenet5, or custom)"
                )))
            }
        }
        self.train_config(0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.prune_schedule()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (i, a) in self.attacks.iter().enumerate() {
            self.parsed_attack(a)
                .map_err(|e| CliError::Config(format!("attacks[{i}]: {e}")))?;
        }
        if matches!(task, Task::AttackEval | Task::LipschitzEval) {
            let dir = self.models_dir.as_ref().ok_or_else(|| {
                CliError::Config("this task needs models_dir (or --models-dir)".into())
            })?;
            if !dir.is_dir() {
                return Err(CliError::Config(format!(
                    "models_dir {} is not a directory",
                    dir.display()
                )));
            }
        }
        if matches!(task, Task::AttackEval | Task::FullFigure) && self.attacks.is_empty() {
            return Err(CliError::Config(
                "attack evaluation needs at least one [[attacks]] entry".into(),
            ));
        }
        if let Some(q) = self.lipschitz.q {
            if q != 1 && q != 2 {
                return Err(CliError::Config(format!(
                    "lipschitz q must be 1 or 2, got {q}"
                )));
            }
        }
        Ok(())
    }

    pub fn mnist_root(&self) -> Result<PathBuf, CliError> {
        resolve_data_root(self.dataset.data_root.as_deref()).ok_or_else(|| {
            CliError::Config(format!(
                "no MNIST root: set dataset.data_root, --data-root, or {DATA_ROOT_ENV}"
            ))
        })
    }

    fn digits(&self) -> [u8; 2] {
        self.dataset.digits.unwrap_or([1, 7])
    }

    /// The train/eval dataset pair the config describes.
    pub fn datasets(&self, seed: u64) -> Result<(Dataset, Dataset), CliError> {
        let stage = |e: sparserob_core::error::Error| CliError::Stage(e.to_string());
        match self.dataset.kind.as_str() {
            "mnist" => {
                let root = self.mnist_root()?;
                Ok((
                    load_mnist_split(&root, MnistSplit::Train).map_err(stage)?,
                    load_mnist_split(&root, MnistSplit::Test).map_err(stage)?,
                ))
            }
            "mnist_pair" => {
                let root = self.mnist_root()?;
                let [a, b] = self.digits();
                let train = load_mnist_split(&root, MnistSplit::Train).map_err(stage)?;
                let eval = load_mnist_split(&root, MnistSplit::Test).map_err(stage)?;
                Ok((
                    filter_pair(&train, digit_class(a), digit_class(b)).map_err(stage)?,
                    filter_pair(&eval, digit_class(a), digit_class(b)).map_err(stage)?,
                ))
            }
            "synth" => {
                let mu_plus = self.dataset.mu_plus.clone().expect("validated");
                let mu_minus = self.dataset.mu_minus.clone().expect("validated");
                let n = mu_plus.len();
                let mp = Tensor::new(vec![n], mu_plus).map_err(stage)?;
                let mm = Tensor::new(vec![n], mu_minus).map_err(stage)?;
                let sigma = self.dataset.sigma.unwrap_or(1.0);
                let n_train = self.dataset.n_per_class.unwrap_or(500);
                let n_eval = self.dataset.eval_n_per_class.unwrap_or(n_train);
                let train = synth_gaussians(&mp, &mm, sigma, n_train, derive_seed(seed, &[1]))
                    .map_err(stage)?;
                let eval = synth_gaussians(&mp, &mm, sigma, n_eval, derive_seed(seed, &[2]))
                    .map_err(stage)?;
                Ok((train, eval))
            }
            _ => unreachable!("validated"),
        }
    }

    /// Builds and initializes the configured model for one seed.
    pub fn build_model(&self, train: &Dataset, seed: u64) -> Result<Network, CliError> {
        let stage = |e: sparserob_core::error::Error| CliError::Stage(e.to_string());
        let input = train.feature_len();
        let classes = train.class_count();
        let mut net = match self.model.kind.as_str() {
            "linear" => {
                let out = if classes == 2 { 1 } else { classes };
                Network::linear(input, out)
            }
            "lenet300" => {
                let out = if classes == 2 { 1 } else { classes };
                Network::mlp(&[input, 300, 100, out]).map_err(stage)?
            }
            "lenet5" => Network::lenet5(),
            "custom" => {
                let mut dims = vec![input];
                dims.extend(self.model.dims.clone().expect("validated"));
                Network::mlp(&dims).map_err(stage)?
            }
            _ => unreachable!("validated"),
        };
        init_weights(&mut net, seed);
        Ok(net)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            iterations: self.train.iterations.unwrap_or(d.iterations),
            batch_size: self.train.batch_size.unwrap_or(d.batch_size),
            base_lr: self.train.base_lr.unwrap_or(d.base_lr),
            momentum: self.train.momentum.unwrap_or(d.momentum),
            lr_gamma: self.train.lr_gamma.unwrap_or(d.lr_gamma),
            lr_power: self.train.lr_power.unwrap_or(d.lr_power),
            seed,
            activation_l1_lambda: self
                .train
                .activation_l1_lambda
                .unwrap_or(d.activation_l1_lambda),
        }
    }

    pub fn prune_schedule(&self) -> PruneSchedule {
        let d = PruneSchedule::default();
        PruneSchedule {
            rounds: self.schedule.rounds.unwrap_or(d.rounds),
            fraction: self.schedule.fraction.unwrap_or(d.fraction),
            retrain_iterations: self
                .schedule
                .retrain_iterations
                .unwrap_or(d.retrain_iterations),
            layers_in_scope: self.schedule.layers_in_scope.clone(),
        }
    }

    /// Number of eval examples attacks run on (0 or absent = all).
    pub fn eval_subset(&self, eval: &Dataset) -> usize {
        match self.eval.subset {
            None | Some(0) => eval.len(),
            Some(n) => n.min(eval.len()),
        }
    }

    pub fn lipschitz_q(&self) -> PNorm {
        match self.lipschitz.q.unwrap_or(2) {
            1 => PNorm::L1,
            _ => PNorm::L2,
        }
    }

    /// Parses one attack spec into the runnable attack plus its CSV labels
    /// (name, params).
    pub fn parsed_attack(&self, spec: &AttackSpec) -> Result<ParsedAttack, String> {
        match spec.kind.as_str() {
            "fgs" => {
                let eps = spec.eps.ok_or("fgs needs eps")?;
                if eps <= 0.0 {
                    return Err(format!("fgs eps must be positive, got {eps}"));
                }
                Ok(ParsedAttack::Linf {
                    name: "fgs",
                    params: format!("eps={eps}"),
                    attack: LinfAttack::Fgs,
                    eps,
                })
            }
            "rfgs" => {
                let eps = spec.eps.ok_or("rfgs needs eps")?;
                if eps <= 0.0 {
                    return Err(format!("rfgs eps must be positive, got {eps}"));
                }
                // The random pre-step is fixed at ε/2; the seed is filled
                // in per run.
                Ok(ParsedAttack::Linf {
                    name: "rfgs",
                    params: format!("eps={eps}"),
                    attack: LinfAttack::Rfgs { seed: 0 },
                    eps,
                })
            }
            "deepfool" => {
                let max_iter = spec.max_iter.unwrap_or(50);
                let overshoot = spec.overshoot.unwrap_or(0.02);
                if max_iter == 0 || overshoot < 0.0 {
                    return Err("deepfool needs max_iter >= 1 and overshoot >= 0".into());
                }
                Ok(ParsedAttack::L2 {
                    name: "deepfool",
                    params: format!("max_iter={max_iter} overshoot={overshoot}"),
                    attack: L2Attack::DeepFool {
                        max_iter,
                        overshoot,
                    },
                })
            }
            "cw" => {
                let d = CwConfig::default();
                let cw = CwConfig {
                    steps: spec.steps.unwrap_or(d.steps),
                    step_size: spec.step_size.unwrap_or(d.step_size),
                    binary_search_rounds: spec
                        .binary_search_rounds
                        .unwrap_or(d.binary_search_rounds),
                    c_init: spec.c_init.unwrap_or(d.c_init),
                    confidence: spec.confidence.unwrap_or(d.confidence),
                };
                cw.validate().map_err(|e| e.to_string())?;
                Ok(ParsedAttack::L2 {
                    name: "cw",
                    params: format!(
                        "steps={} rounds={} c_init={}",
                        cw.steps, cw.binary_search_rounds, cw.c_init
                    ),
                    attack: L2Attack::CarliniWagner(cw),
                })
            }
            other => Err(format!(
                "unknown attack kind {other:?} (expected fgs, rfgs, deepfool, or cw)"
            )),
        }
    }

    /// All attacks, parsed (config must already be validated).
    pub fn parsed_attacks(&self) -> Vec<ParsedAttack> {
        self.attacks
            .iter()
            .map(|a| self.parsed_attack(a).expect("validated"))
            .collect()
    }

    /// A seed-independent fingerprint of the scientific content of the
    /// config, used to refuse aggregation across incompatible runs.
    pub fn fingerprint(&self) -> String {
        let schedule = self.prune_schedule();
        let attacks: Vec<String> = self
            .attacks
            .iter()
            .map(|a| {
                self.parsed_attack(a)
                    .map(|p| p.label())
                    .unwrap_or_else(|e| format!("invalid:{e}"))
            })
            .collect();
        format!(
            "dataset={} digits={:?} model={} dims={:?} iters={} lambda={} \
             rounds={} fraction={:.6} retrain={} attacks=[{}]",
            self.dataset.kind,
            self.dataset.digits,
            self.model.kind,
            self.model.dims,
            self.train_config(0).iterations,
            self.train_config(0).activation_l1_lambda,
            schedule.rounds,
            schedule.fraction,
            schedule.retrain_iterations,
            attacks.join(";")
        )
    }
}

/// A concrete attack with its CSV identity.
#[derive(Debug, Clone)]
pub enum ParsedAttack {
    Linf {
        name: &'static str,
        params: String,
        attack: LinfAttack,
        eps: f64,
    },
    L2 {
        name: &'static str,
        params: String,
        attack: L2Attack,
    },
}

impl ParsedAttack {
    pub fn label(&self) -> String {
        match self {
            ParsedAttack::Linf { name, params, .. } => format!("{name}[{params}]"),
            ParsedAttack::L2 { name, params, .. } => format!("{name}[{params}]"),
        }
    }
}
