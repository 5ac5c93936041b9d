//! Experiment configuration shared by the command-line runner and the tests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DataRecipe;
use crate::error::{invalid, Result};
use crate::fields::{HalfSpaceGrid, TimeGrid};
use crate::operators::{OperatorConfig, Operators};
use crate::params::{derive_exponents, find_admissible, ExponentSet, ProblemParams};
use crate::solver::SolverConfig;
use crate::verify::{PositivityOptions, SelfSimilarityOptions, StabilityOptions, SymmetryOptions, TraceOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentChoice {
    pub q1: f64,
    pub q2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub l_tan: f64,
    pub m_tan: usize,
    pub l_nor: f64,
    pub m_nor: usize,
    pub rho: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { l_tan: 8.0, m_tan: 33, l_nor: 8.0, m_nor: 16, rho: 1.15 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub m_t: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { t_min: 1e-2, t_max: 1e2, m_t: 16 }
    }
}

/// One verifier with its switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check<T> {
    #[serde(default = "enabled")]
    pub enabled: bool,
    #[serde(flatten)]
    pub options: T,
}

fn enabled() -> bool {
    true
}

impl<T: Default> Default for Check<T> {
    fn default() -> Self {
        Self { enabled: true, options: T::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    #[serde(flatten)]
    pub options: StabilityOptions,
    /// The perturbation `a` added to the data.
    pub perturbation: DataRecipe,
}

impl Default for StabilityCheck {
    fn default() -> Self {
        Self {
            options: StabilityOptions::default(),
            perturbation: DataRecipe::GaussianBump { amplitude: 0.05, width: 1.0, center: vec![1.0, 0.0] },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub self_similarity: Check<SelfSimilarityOptions>,
    pub symmetry: Check<SymmetryOptions>,
    pub positivity: Check<PositivityOptions>,
    pub trace: Check<TraceOptions>,
    pub stability: Check<StabilityCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub kernel_samples: usize,
    pub kernel_theta: f64,
    pub holder_trials: usize,
    pub holder_slack: f64,
    pub riesz_dilations: Vec<f64>,
    pub riesz_tolerance: f64,
    pub contraction_pairs: usize,
    pub blocks: usize,
    pub block_times: Vec<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            kernel_samples: 10_000,
            kernel_theta: 0.5,
            holder_trials: 100,
            holder_slack: 0.1,
            riesz_dilations: vec![0.5, 0.75, 1.0],
            riesz_tolerance: 0.05,
            contraction_pairs: 4,
            blocks: 5,
            block_times: vec![1e-1, 1e-2, 1e-3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub params: ProblemParams,
    /// `None` picks an admissible pair automatically.
    pub exponents: Option<ExponentChoice>,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub data: DataRecipe,
    pub solver: SolverConfig,
    pub operators: OperatorConfig,
    pub verify: VerifyConfig,
    pub probes: ProbeConfig,
    /// Required by every randomized probe.
    pub seed: Option<u64>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: ProblemParams::witness(),
            exponents: Some(ExponentChoice { q1: 8.0, q2: 6.0 }),
            grid: GridConfig::default(),
            time: TimeConfig::default(),
            data: DataRecipe::GaussianBump { amplitude: 0.3, width: 1.0, center: vec![] },
            solver: SolverConfig::default(),
            operators: OperatorConfig::default(),
            verify: VerifyConfig::default(),
            probes: ProbeConfig::default(),
            seed: Some(1),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ProblemParams::new(self.params.n, self.params.p1, self.params.p2, self.params.mu)?;
        self.solver.validate()?;
        self.operators.validate()?;
        self.half_space_grid()?;
        self.time_grid()?;
        Ok(())
    }

    pub fn exponents(&self) -> Result<ExponentSet> {
        let (q1, q2) = match &self.exponents {
            Some(c) => (c.q1, c.q2),
            None => find_admissible(&self.params)
                .map_err(|e| invalid(format!("no admissible exponents: {} ({})", e.empty_interval, e.detail)))?,
        };
        derive_exponents(&self.params, q1, q2)
    }

    pub fn half_space_grid(&self) -> Result<HalfSpaceGrid> {
        let g = &self.grid;
        HalfSpaceGrid::new(self.params.n, g.l_tan, g.m_tan, g.l_nor, g.m_nor, g.rho)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.time.t_min, self.time.t_max, self.time.m_t)
    }

    pub fn operators_engine(&self) -> Result<Operators> {
        Operators::new(self.half_space_grid()?, self.time_grid()?, self.operators.clone())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| invalid("a seed is required for randomized probes"))
    }

    /// SHA-256 of the compact JSON form, as lowercase hex.
    pub fn content_hash(&self, extra: &[u8]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(extra);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_json().contains("\"kind\": \"gaussian-bump\""));
    }

    #[test]
    fn missing_fields_take_defaults() {
        let c = ExperimentConfig::from_json(r#"{"seed": 9}"#).unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.grid, GridConfig::default());
    }

    #[test]
    fn default_exponents_are_the_witness() {
        let e = ExperimentConfig::default().exponents().unwrap();
        assert_eq!(e, ExponentSet::witness());
        let auto = ExperimentConfig { exponents: None, ..Default::default() }.exponents().unwrap();
        assert!(crate::params::check_admissible(&auto).admissible);
    }

    #[test]
    fn hash_depends_on_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: Some(2), ..Default::default() };
        assert_eq!(a.content_hash(b""), a.content_hash(b""));
        assert_ne!(a.content_hash(b""), b.content_hash(b""));
        assert_eq!(a.content_hash(b"").len(), 64);
    }

    #[test]
    fn bad_resolution_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.grid.m_tan = 1;
        assert!(c.validate().is_err());
    }
}
