//! Experiment configuration, read from TOML. Every key is optional; missing
//! keys take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use papl_core::elbo::COUNTEREXAMPLE_CONSTANTS;
use papl_core::{DataDistribution, PositionPlanner, Schedule, SetPlanner, Vocab};
use serde::Deserialize;

use crate::Usage;

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub problem: Problem,
    pub denoiser: DenoiserInit,
    pub counterexample: CounterexampleConfig,
    pub bounds: BoundsConfig,
    pub sampler: SamplerCheckConfig,
    pub train: TrainCompareConfig,
    pub beta: BetaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            out: PathBuf::from("papl-out"),
            problem: Problem::default(),
            denoiser: DenoiserInit::default(),
            counterexample: CounterexampleConfig::default(),
            bounds: BoundsConfig::default(),
            sampler: SamplerCheckConfig::default(),
            train: TrainCompareConfig::default(),
            beta: BetaConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Usage(format!("{}: {e}", path.display())).into())
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn vocab(&self) -> anyhow::Result<Vocab> {
        Ok(Vocab::new(self.problem.vocab_size)?)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Problem {
    /// Vocabulary size including the mask token.
    pub vocab_size: usize,
}

impl Default for Problem {
    fn default() -> Self {
        Self { vocab_size: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Random,
    Uniform,
    /// Read from `table`; a single instance.
    Table,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserInit {
    pub init: InitKind,
    /// Standard deviation of random logits.
    pub scale: f64,
    pub table: Option<PathBuf>,
}

impl Default for DenoiserInit {
    fn default() -> Self {
        Self {
            init: InitKind::Random,
            scale: 1.5,
            table: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleConfig {
    /// `Cat(1; ·)` at `D^1(m,m)`, `D^2(m,m)`, `D^1(m,1)`, `D^1(m,2)`,
    /// `D^2(1,m)`, `D^2(2,m)`.
    pub constants: [f64; 6],
    /// JSON denoiser table (d=3, L=2) used instead of the constants.
    pub table: Option<PathBuf>,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            constants: COUNTEREXAMPLE_CONSTANTS,
            table: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    pub instances: usize,
    pub lengths: Vec<usize>,
    /// Lengths above this skip the P2 bounds.
    pub p2_max_length: usize,
    /// Planners for the planner-aware bound; the uniform planner is always
    /// added for the degeneracy check.
    pub planners: Vec<PositionPlanner>,
    pub softmax_taus: Vec<f64>,
    pub p2_etas: Vec<f64>,
    pub tolerance: f64,
    pub degeneracy_tolerance: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            lengths: vec![2, 3, 4],
            p2_max_length: 3,
            planners: vec![PositionPlanner::Greedy, PositionPlanner::SoftGreedy { tau: 0.5 }],
            softmax_taus: vec![0.25, 1.0, 4.0],
            p2_etas: vec![0.0, 1.0, 5.0],
            tolerance: 1e-8,
            degeneracy_tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    Vanilla,
    Greedy,
    SoftGreedy { tau: f64 },
    #[serde(rename = "p2_topk")]
    P2TopK { eta: f64 },
    Rdm,
}

impl SamplerKind {
    pub fn name(&self) -> String {
        match self {
            SamplerKind::Vanilla => "vanilla".into(),
            SamplerKind::Greedy => "greedy".into(),
            SamplerKind::SoftGreedy { tau } => format!("soft_greedy(tau={tau})"),
            SamplerKind::P2TopK { eta } => format!("p2_topk(eta={eta})"),
            SamplerKind::Rdm => "rdm".into(),
        }
    }

    pub fn slug(&self) -> String {
        self.name().replace(['(', ')', '='], "_").trim_end_matches('_').to_string()
    }

    pub fn position_planner(&self) -> Option<PositionPlanner> {
        match *self {
            SamplerKind::Vanilla => Some(PositionPlanner::Uniform),
            SamplerKind::Greedy => Some(PositionPlanner::Greedy),
            SamplerKind::SoftGreedy { tau } => Some(PositionPlanner::SoftGreedy { tau }),
            _ => None,
        }
    }

    pub fn set_planner(&self) -> Option<SetPlanner> {
        match *self {
            SamplerKind::P2TopK { eta } => Some(SetPlanner::P2TopK { eta }),
            SamplerKind::Rdm => Some(SetPlanner::Rdm),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerCheckConfig {
    pub instances: usize,
    pub samples: usize,
    pub length: usize,
    /// Significance level of each chi-square test.
    pub alpha: f64,
    /// Fraction of instances per sampler that must not be rejected.
    pub min_pass_fraction: f64,
    pub kinds: Vec<SamplerKind>,
    /// Test every sampler against the law of a different planner (harness
    /// self-test; expected to fail).
    pub mismatch: bool,
    /// Write NDJSON paths of instance 0.
    pub trace: bool,
}

impl Default for SamplerCheckConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            samples: 100_000,
            length: 3,
            alpha: 0.001,
            min_pass_fraction: 0.95,
            kinds: vec![
                SamplerKind::Vanilla,
                SamplerKind::Greedy,
                SamplerKind::SoftGreedy { tau: 0.5 },
                SamplerKind::P2TopK { eta: 1.0 },
            ],
            mismatch: false,
            trace: false,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    /// `"three_mode"`: modes 1123, 2213, 3321 at d=4, L=4.
    Named(String),
    Explicit {
        vocab_size: usize,
        support: Vec<String>,
        probs: Vec<f64>,
    },
}

impl DataSpec {
    pub fn build(&self) -> anyhow::Result<DataDistribution> {
        match self {
            DataSpec::Named(name) if name == "three_mode" => Ok(DataDistribution::three_mode_toy()),
            DataSpec::Named(name) => Err(Usage(format!("unknown data set {name:?}")).into()),
            DataSpec::Explicit {
                vocab_size,
                support,
                probs,
            } => {
                let vocab = Vocab::new(*vocab_size)?;
                let seqs = support.iter().map(|s| vocab.parse(s)).collect::<Result<Vec<_>, _>>()?;
                Ok(DataDistribution::new(vocab, seqs, probs.clone())?)
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCompareConfig {
    pub data: DataSpec,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    pub detach_planner_weights: bool,
    pub loss_window: usize,
    /// Standard deviation of the shared random initial logits.
    pub init_scale: f64,
    /// One planner-aware arm per (alpha, tau) pair.
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    /// Adds an alpha = 0 arm that must reproduce the vanilla arm exactly.
    pub alpha_zero_control: bool,
    /// Adds one planner-only arm per tau.
    pub pure_planner: bool,
    /// Temperature of the soft-greedy sampler reported in the summary,
    /// independent of the training temperatures.
    pub inference_tau: Option<f64>,
}

impl Default for TrainCompareConfig {
    fn default() -> Self {
        Self {
            data: DataSpec::Named("three_mode".into()),
            seeds: vec![0, 1, 2, 3, 4],
            steps: 2000,
            batch_size: 16,
            learning_rate: 1.0,
            eval_every: 100,
            detach_planner_weights: true,
            loss_window: 50,
            init_scale: 0.5,
            alphas: vec![1.0],
            taus: vec![1.0],
            alpha_zero_control: true,
            pure_planner: false,
            inference_tau: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaConfig {
    pub max_length: usize,
    pub schedules: Vec<Schedule>,
    pub tolerance: f64,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            max_length: 6,
            schedules: vec![Schedule::Linear, Schedule::Cosine, Schedule::Polynomial { power: 2.0 }],
            tolerance: 1e-8,
        }
    }
}
