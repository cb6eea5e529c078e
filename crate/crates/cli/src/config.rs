//! Experiment configuration: a TOML document with one section per concern.
//! Every field has a default, and [`ExperimentConfig::resolve`] writes the
//! task-dependent defaults back so the echoed config reproduces the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MeanEstimate,
    Optimize,
    Perceptron,
    Ldp,
    Cog,
    Anneal,
    BenchSuite,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::MeanEstimate => "mean_estimate",
            Task::Optimize => "optimize",
            Task::Perceptron => "perceptron",
            Task::Ldp => "ldp",
            Task::Cog => "cog",
            Task::Anneal => "anneal",
            Task::BenchSuite => "bench_suite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    PointMass,
    Dense,
    Sparse,
    MultiScale,
    Vertices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionConfig {
    pub family: FamilyName,
    pub dim: usize,
    pub atoms: usize,
    /// Margin of labelled distributions.
    pub margin: f64,
    /// Success probability of the two-point distribution used by `ldp`.
    pub mean: f64,
}

impl Default for DistributionConfig {
    fn default() -> Self {
        DistributionConfig { family: FamilyName::Dense, dim: 16, atoms: 20, margin: 0.1, mean: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    Exact,
    Samples,
    Ldp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseName {
    Zero,
    Uniform,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintName {
    Plus,
    Minus,
    Alternating,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub backend: BackendName,
    pub noise: NoiseName,
    pub hint: HintName,
    /// Local privacy parameter of the `ldp` backend and task.
    pub privacy: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            backend: BackendName::Exact,
            noise: NoiseName::Adversarial,
            hint: HintName::Alternating,
            privacy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Mirror,
    Accelerated,
    StronglyConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    Auto,
    Kashin,
    Rotation,
    ViaL2,
    VstatRings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmConfig {
    /// Norm exponent: the estimation norm for `mean_estimate`, the ball of
    /// `optimize`, the example norm for `perceptron`.
    pub q: f64,
    pub eps: f64,
    pub iterations: Option<usize>,
    pub eta: Option<f64>,
    pub method: MethodName,
    pub variant: VariantName,
    /// Failure probability of randomized guarantees.
    pub delta: f64,
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        AlgorithmConfig {
            q: 2.0,
            eps: 0.1,
            iterations: None,
            eta: None,
            method: MethodName::Mirror,
            variant: VariantName::Auto,
            delta: 0.1,
        }
    }
}

/// Grid swept by `bench_suite`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub qs: Vec<f64>,
    pub dims: Vec<usize>,
    pub eps: Vec<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig { qs: vec![1.5, 2.0, 4.0, f64::INFINITY], dims: vec![64], eps: vec![0.1, 0.2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        ExperimentConfig {
            task,
            seed: 0,
            out: None,
            distribution: DistributionConfig::default(),
            oracle: OracleConfig::default(),
            algorithm: AlgorithmConfig::default(),
            suite: SuiteConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Every schema violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let d = &self.distribution;
        let a = &self.algorithm;
        let o = &self.oracle;
        if d.dim == 0 {
            v.push("distribution.dim must be positive".into());
        }
        if d.atoms == 0 {
            v.push("distribution.atoms must be positive".into());
        }
        if !(d.margin > 0.0 && d.margin <= 1.0) {
            v.push(format!("distribution.margin must lie in (0, 1], got {}", d.margin));
        }
        if !(d.mean >= 0.0 && d.mean <= 1.0) {
            v.push(format!("distribution.mean must lie in [0, 1], got {}", d.mean));
        }
        if !(a.q >= 1.0) {
            v.push(format!("algorithm.q must be at least 1, got {}", a.q));
        }
        if !(a.eps > 0.0 && a.eps <= 1.0) {
            v.push(format!("algorithm.eps must lie in (0, 1], got {}", a.eps));
        }
        if !(a.delta > 0.0 && a.delta < 1.0) {
            v.push(format!("algorithm.delta must lie in (0, 1), got {}", a.delta));
        }
        if let Some(eta) = a.eta {
            if !(eta >= 0.0) {
                v.push(format!("algorithm.eta must be nonnegative, got {eta}"));
            }
        }
        if !(o.privacy > 0.0 && o.privacy.is_finite()) {
            v.push(format!("oracle.privacy must be positive, got {}", o.privacy));
        }
        match self.task {
            Task::Optimize => {
                if a.method == MethodName::Accelerated && a.q > 2.0 {
                    v.push("accelerated method needs algorithm.q <= 2".into());
                }
                if a.method == MethodName::StronglyConvex && a.q != 2.0 {
                    v.push("strongly convex method needs algorithm.q = 2".into());
                }
            }
            Task::Perceptron => {
                if !(a.q >= 2.0) {
                    v.push(format!("perceptron needs algorithm.q >= 2, got {}", a.q));
                }
                if d.dim < 2 {
                    v.push("perceptron needs distribution.dim >= 2".into());
                }
                if let Some(eta) = a.eta {
                    if a.q != 2.0 && eta != 0.0 {
                        v.push("algorithm.eta applies only to q = 2".into());
                    } else if eta >= 2.0 * d.margin / 3.0 {
                        v.push(format!("algorithm.eta must be below 2/3 of the margin, got {eta}"));
                    }
                }
            }
            Task::Cog | Task::Anneal => {
                if a.q != 2.0 {
                    v.push("cog and anneal optimize over the Euclidean ball; algorithm.q must be 2".into());
                }
            }
            Task::BenchSuite => {
                let s = &self.suite;
                if s.qs.is_empty() || s.dims.is_empty() || s.eps.is_empty() {
                    v.push("suite grid must be nonempty".into());
                }
                if s.qs.iter().any(|q| !(*q >= 1.0)) {
                    v.push("suite.qs must be at least 1".into());
                }
                if s.dims.iter().any(|d| *d == 0) {
                    v.push("suite.dims must be positive".into());
                }
                if s.eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                    v.push("suite.eps must lie in (0, 1]".into());
                }
            }
            Task::MeanEstimate => {
                let ok = match a.variant {
                    VariantName::Auto => true,
                    VariantName::Kashin | VariantName::Rotation => a.q == 2.0,
                    VariantName::ViaL2 | VariantName::VstatRings => a.q > 1.0 && a.q < 2.0,
                };
                if !ok {
                    v.push(format!("variant {:?} does not apply to q = {}", a.variant, a.q));
                }
            }
            Task::Ldp => {}
        }
        v
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Schema(v))
        }
    }

    /// Fills task-dependent defaults so that the config fully determines the
    /// run.
    pub fn resolve(mut self) -> Self {
        let a = &mut self.algorithm;
        match self.task {
            Task::Optimize => {
                a.iterations.get_or_insert(100);
                let share = if a.method == MethodName::Accelerated { 6.0 } else { 2.0 };
                a.eta.get_or_insert(a.eps / share);
            }
            Task::Perceptron => {
                let eta = if a.q == 2.0 { self.distribution.margin / 2.0 } else { 0.0 };
                a.eta.get_or_insert(eta);
            }
            _ => {}
        }
        self
    }
}
