//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use pdnet_core::network::AnalysisSpec;
use pdnet_core::rng::SeededRng;
use pdnet_core::train::{LrScales, StepDecay, TrainConfig};
use pdnet_core::{DegradationKind, DegradationOperator, LearningMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Deblur,
    Sr,
    Denoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationConfig {
    /// Blur window for `deblur`, decimation factor for `sr`; unused for `denoise`.
    #[serde(default)]
    pub size_or_factor: Option<usize>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layers: usize,
    #[serde(default)]
    pub mode: LearningMode,
    /// `dense:P`, `fQsNnS` or `fQsNnS:truncated`, fused in order.
    pub analysis: Vec<String>,
    #[serde(default = "default_stddev")]
    pub init_stddev: f64,
    #[serde(default = "default_tau")]
    pub init_tau: f64,
}

fn default_stddev() -> f64 {
    pdnet_core::network::DEFAULT_INIT_STDDEV
}

fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub gamma: f64,
    pub lr_scales: LrScales,
    pub decay: Option<StepDecay>,
    pub batch_size: usize,
    pub max_iter: usize,
    pub validation_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            gamma: t.gamma,
            lr_scales: t.lr_scales,
            decay: t.decay,
            batch_size: t.batch_size,
            max_iter: t.max_iter,
            validation_every: t.validation_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub size: usize,
    pub per_image: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// An IDX image file, or a directory of binary PGM files.
    pub images: PathBuf,
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default)]
    pub patches: Option<PatchConfig>,
}

fn default_train_frac() -> f64 {
    0.5
}

fn default_val_frac() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: Split,
    /// Additional noise levels for the robustness table.
    pub betas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    Identity,
    Differences,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveConfig {
    pub split: Split,
    pub limit: Option<usize>,
    pub regularizer: Regularizer,
    /// Scale folded into the analysis operator.
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Defaults: `tau = 1/||A||^2`, `sigma` at 90% of the admissible bound.
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            split: Split::Test,
            limit: None,
            regularizer: Regularizer::Identity,
            lambda: 1.0,
            tol: pdnet_core::pdhg::DEFAULT_TOL,
            max_iter: 10_000,
            tau: None,
            sigma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub layers: usize,
    pub side: usize,
    pub rows: usize,
    pub block_sparse: bool,
    pub blur: bool,
    pub samples: usize,
    pub epsilon: f64,
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let s = pdnet_core::gradcheck::InstanceSpec::default();
        Self {
            layers: s.layers,
            side: s.side,
            rows: s.rows,
            block_sparse: s.block_sparse,
            blur: s.blur,
            samples: s.samples,
            epsilon: pdnet_core::gradcheck::DEFAULT_EPSILON,
            rel_tol: pdnet_core::gradcheck::DEFAULT_REL_TOL,
            abs_floor: pdnet_core::gradcheck::DEFAULT_ABS_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub degradation: DegradationConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Independent seeds derived from the master seed.
#[derive(Debug, Clone, Copy)]
pub struct Seeds {
    pub degrade: u64,
    pub split: u64,
    pub init: u64,
    pub train: u64,
    pub noise: u64,
}

impl RunConfig {
    /// Reads and validates a config; relative paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.images, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.degradation;
        ensure!(d.alpha >= 0.0 && d.alpha.is_finite(), "degradation.alpha must be >= 0");
        match (self.task, d.size_or_factor) {
            (Task::Deblur, Some(s)) => ensure!(s % 2 == 1, "blur size must be odd, got {s}"),
            (Task::Sr, Some(f)) => ensure!(f >= 1, "decimation factor must be >= 1"),
            (Task::Denoise, _) => {}
            (_, None) => bail!("degradation.size_or_factor is required for {:?}", self.task),
        }
        ensure!(self.network.layers >= 1, "network.layers must be at least 1");
        ensure!(!self.network.analysis.is_empty(), "network.analysis needs at least one spec");
        self.analysis_specs()?;
        ensure!(self.network.init_stddev > 0.0, "network.init_stddev must be positive");
        ensure!(self.network.init_tau > 0.0, "network.init_tau must be positive");
        self.train_config().validate()?;
        let f = (self.data.train_frac, self.data.val_frac);
        ensure!(
            f.0 >= 0.0 && f.1 >= 0.0 && f.0 + f.1 <= 1.0,
            "data.train_frac + data.val_frac must lie in [0, 1]"
        );
        if let Some(p) = &self.data.patches {
            ensure!(p.size >= 1 && p.per_image >= 1, "patch size and count must be positive");
        }
        ensure!(
            self.eval.betas.iter().all(|b| *b >= 0.0 && b.is_finite()),
            "eval.betas must be nonnegative"
        );
        ensure!(self.solve.lambda > 0.0, "solve.lambda must be positive");
        ensure!(self.solve.tol > 0.0 && self.solve.max_iter > 0, "solve.tol and solve.max_iter must be positive");
        Ok(())
    }

    pub fn analysis_specs(&self) -> Result<Vec<AnalysisSpec>> {
        self.network
            .analysis
            .iter()
            .map(|s| s.parse::<AnalysisSpec>().with_context(|| format!("analysis spec {s:?}")))
            .collect()
    }

    /// Checks the analysis specs against the image side of the data.
    pub fn validate_for_side(&self, side: usize) -> Result<()> {
        for spec in self.analysis_specs()? {
            spec.validate(side).with_context(|| format!("analysis spec {spec}"))?;
        }
        if let Some(p) = &self.data.patches {
            ensure!(p.size <= side, "patch size {} exceeds the image side {side}", p.size);
        }
        Ok(())
    }

    pub fn degradation_kind(&self) -> Result<DegradationKind> {
        Ok(match self.task {
            Task::Deblur => DegradationKind::UniformBlur {
                size: self.degradation.size_or_factor.unwrap_or(3),
            },
            Task::Sr => DegradationKind::Decimation {
                factor: self.degradation.size_or_factor.unwrap_or(2),
            },
            Task::Denoise => DegradationKind::Identity,
        })
    }

    pub fn degradation_operator(&self, side: usize) -> Result<DegradationOperator> {
        Ok(DegradationOperator::new(self.degradation_kind()?, side)?)
    }

    pub fn seeds(&self) -> Seeds {
        let s = |i| SeededRng::stream(self.seed, i).next_u64();
        Seeds {
            degrade: s(0),
            split: s(1),
            init: s(2),
            train: s(3),
            noise: s(4),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            gamma: t.gamma,
            lr_scales: t.lr_scales,
            decay: t.decay,
            batch_size: t.batch_size,
            max_iter: t.max_iter,
            mode: self.network.mode,
            seed: self.seeds().train,
            validation_every: t.validation_every,
            ..TrainConfig::default()
        }
    }
}
