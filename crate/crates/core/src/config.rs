//! Scalar model parameters and experiment descriptions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unsupported layout: {num_cells} cells (supported: 1 or 7)")]
    UnsupportedLayout { num_cells: usize },
}

/// A localized jamming source: a plane wave from `angle_deg` with received power `power`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JammerConfig {
    pub angle_deg: f64,
    pub power: f64,
}

/// All scalar parameters of the uplink model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// Number of cells `L` (1 or 7).
    pub num_cells: usize,
    /// UEs per cell `K`.
    pub ues_per_cell: usize,
    /// BS antennas `N`.
    pub antennas: usize,
    /// Pilot length, equal to the number of orthogonal pilots.
    pub tau_p: usize,
    /// Data samples per coherence block.
    pub tau_u: usize,
    /// Coherence blocks `T` used for covariance estimation.
    pub blocks: usize,
    /// Held-out blocks used only to measure NMSE.
    pub eval_blocks: usize,
    /// Transmit power of every UE (pilot and data phase).
    pub ue_power: f64,
    /// Per-antenna white noise power. Link gains are 1 on the UE ring, so 1.0
    /// is 0 dB per-antenna SNR there.
    pub noise_power: f64,
    pub jammer: Option<JammerConfig>,
    /// Hexagon circumradius in meters.
    pub cell_radius: f64,
    /// Distance from each BS to its own UEs in meters.
    pub ring_radius: f64,
    pub pathloss_exponent: f64,
    /// Half-width of the uniform angular spread around the nominal angle.
    pub angular_half_spread_deg: f64,
    /// Diagonal loading factor applied when a matrix fails to factor.
    pub loading_factor: f64,
    /// Master seed.
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_cells: 7,
            ues_per_cell: 5,
            antennas: 32,
            tau_p: 10,
            tau_u: 40,
            blocks: 300,
            eval_blocks: 200,
            ue_power: 1.0,
            noise_power: 1.0,
            jammer: None,
            cell_radius: 250.0,
            ring_radius: 140.0,
            pathloss_exponent: 3.76,
            angular_half_spread_deg: 10.0,
            loading_factor: 1e-3,
            seed: 1,
        }
    }
}

impl SystemConfig {
    pub fn tau_c(&self) -> usize {
        self.tau_p + self.tau_u
    }

    pub fn num_ues(&self) -> usize {
        self.num_cells * self.ues_per_cell
    }

    pub fn angular_half_spread(&self) -> f64 {
        self.angular_half_spread_deg.to_radians()
    }

    /// Paper-sized network: 100 antennas, 10 UEs per cell.
    pub fn paper_scale() -> Self {
        Self {
            antennas: 100,
            ues_per_cell: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, what: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid(what.to_string()))
            }
        }
        if self.num_cells != 1 && self.num_cells != 7 {
            return Err(ConfigError::UnsupportedLayout {
                num_cells: self.num_cells,
            });
        }
        check(self.ues_per_cell >= 1, "ues_per_cell ≥ 1")?;
        check(self.antennas >= 1, "antennas ≥ 1")?;
        check(self.tau_p >= 1, "tau_p ≥ 1")?;
        check(self.tau_u >= 1, "tau_u ≥ 1")?;
        check(self.blocks >= 1, "blocks ≥ 1")?;
        check(self.eval_blocks >= 1, "eval_blocks ≥ 1")?;
        check(self.ue_power > 0.0, "ue_power > 0")?;
        check(self.noise_power > 0.0, "noise_power > 0")?;
        check(self.cell_radius > 0.0, "cell_radius > 0")?;
        check(
            self.ring_radius > 0.0 && self.ring_radius < self.cell_radius * 3f64.sqrt() / 2.0,
            "0 < ring_radius < hexagon inradius",
        )?;
        check(self.pathloss_exponent > 0.0, "pathloss_exponent > 0")?;
        check(
            self.angular_half_spread_deg > 0.0 && self.angular_half_spread_deg < 90.0,
            "0 < angular_half_spread_deg < 90",
        )?;
        check(self.loading_factor >= 0.0, "loading_factor ≥ 0")?;
        if let Some(j) = &self.jammer {
            check(j.power >= 0.0, "jammer.power ≥ 0")?;
        }
        Ok(())
    }
}

/// Channel estimators the harness can evaluate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Least squares with a fixed cyclic pilot allocation.
    LsFixed,
    /// MMSE with true covariances and a fixed cyclic pilot allocation.
    MmseFixed,
    /// MMSE with true covariances under random pilot allocation.
    MmseRandom,
    /// Block-dependent MMSE with true covariances and intra-cell pilot knowledge.
    MmseRandomImpr,
    /// MMSE filter built from the subtraction covariance estimate.
    Subt,
    /// Low-rank approximate MMSE from the GEVD covariance estimate.
    Gevd,
    /// Block-dependent improved approximate MMSE from GEVD estimates.
    GevdImpr,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::LsFixed,
        EstimatorKind::MmseFixed,
        EstimatorKind::MmseRandom,
        EstimatorKind::MmseRandomImpr,
        EstimatorKind::Subt,
        EstimatorKind::Gevd,
        EstimatorKind::GevdImpr,
    ];

    pub fn needs_rank(self) -> bool {
        matches!(self, EstimatorKind::Gevd | EstimatorKind::GevdImpr)
    }

    /// Uses covariances estimated from the uplink data.
    pub fn is_data_driven(self) -> bool {
        matches!(
            self,
            EstimatorKind::Subt | EstimatorKind::Gevd | EstimatorKind::GevdImpr
        )
    }

    pub fn uses_fixed_allocation(self) -> bool {
        matches!(self, EstimatorKind::LsFixed | EstimatorKind::MmseFixed)
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::LsFixed => "ls_fixed",
            EstimatorKind::MmseFixed => "mmse_fixed",
            EstimatorKind::MmseRandom => "mmse_random",
            EstimatorKind::MmseRandomImpr => "mmse_random_impr",
            EstimatorKind::Subt => "subt",
            EstimatorKind::Gevd => "gevd",
            EstimatorKind::GevdImpr => "gevd_impr",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            EstimatorKind::LsFixed => "least squares, fixed cyclic pilots, no covariance knowledge",
            EstimatorKind::MmseFixed => {
                "MMSE with true covariances, fixed cyclic pilots (lower bound)"
            }
            EstimatorKind::MmseRandom => "MMSE with true covariances, random pilots",
            EstimatorKind::MmseRandomImpr => {
                "block-wise MMSE with true covariances and known intra-cell pilots, random pilots"
            }
            EstimatorKind::Subt => "MMSE from the subtraction covariance estimate, random pilots",
            EstimatorKind::Gevd => "rank-R approximate MMSE from the GEVD covariance estimate",
            EstimatorKind::GevdImpr => {
                "rank-R improved approximate MMSE using known intra-cell pilots"
            }
        }
    }
}

/// One estimator to evaluate; `rank` is required for the GEVD family.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, rank: None }
    }

    pub fn ranked(kind: EstimatorKind, rank: usize) -> Self {
        Self {
            kind,
            rank: Some(rank),
        }
    }

    /// Label used in result tables, e.g. `gevd_10`.
    pub fn label(&self) -> String {
        match self.rank {
            Some(r) if self.kind.needs_rank() => format!("{}_{}", self.kind.name(), r),
            _ => self.kind.name().to_string(),
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    /// Number of estimation blocks.
    #[serde(rename = "T")]
    Blocks,
    #[serde(rename = "tau_p")]
    TauP,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Blocks => "T",
            SweepVariable::TauP => "tau_p",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<usize>,
}

/// A complete Monte-Carlo experiment.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub estimators: Vec<EstimatorSpec>,
    pub sweep: SweepConfig,
    pub monte_carlo_runs: usize,
}

impl Default for ExperimentConfig {
    /// Desk-scale reproduction of the coherence-block sweep.
    fn default() -> Self {
        use EstimatorKind::*;
        Self {
            system: SystemConfig::default(),
            estimators: vec![
                EstimatorSpec::new(LsFixed),
                EstimatorSpec::new(MmseFixed),
                EstimatorSpec::new(MmseRandom),
                EstimatorSpec::new(MmseRandomImpr),
                EstimatorSpec::new(Subt),
                EstimatorSpec::ranked(Gevd, 10),
                EstimatorSpec::ranked(Gevd, 20),
                EstimatorSpec::ranked(GevdImpr, 10),
                EstimatorSpec::ranked(GevdImpr, 20),
            ],
            sweep: SweepConfig {
                variable: SweepVariable::Blocks,
                values: vec![75, 150, 300, 600, 1200],
            },
            monte_carlo_runs: 10,
        }
    }
}

impl ExperimentConfig {
    /// Paper-sized network with ranks 30 and 60 and 20 runs.
    pub fn paper_scale() -> Self {
        use EstimatorKind::*;
        Self {
            system: SystemConfig::paper_scale(),
            estimators: vec![
                EstimatorSpec::new(LsFixed),
                EstimatorSpec::new(MmseFixed),
                EstimatorSpec::new(MmseRandom),
                EstimatorSpec::new(MmseRandomImpr),
                EstimatorSpec::new(Subt),
                EstimatorSpec::ranked(Gevd, 30),
                EstimatorSpec::ranked(Gevd, 60),
                EstimatorSpec::ranked(GevdImpr, 30),
                EstimatorSpec::ranked(GevdImpr, 60),
            ],
            sweep: SweepConfig {
                variable: SweepVariable::Blocks,
                values: vec![75, 150, 300, 600, 1200, 1500],
            },
            monte_carlo_runs: 20,
        }
    }

    /// System parameters with the sweep variable set to `value`.
    pub fn system_at(&self, value: usize) -> SystemConfig {
        let mut sys = self.system.clone();
        match self.sweep.variable {
            SweepVariable::Blocks => sys.blocks = value,
            SweepVariable::TauP => sys.tau_p = value,
        }
        sys
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        if self.monte_carlo_runs < 1 {
            return Err(ConfigError::Invalid("monte_carlo_runs ≥ 1".into()));
        }
        if self.sweep.values.is_empty() || self.sweep.values.contains(&0) {
            return Err(ConfigError::Invalid(
                "sweep values non-empty and positive".into(),
            ));
        }
        for &v in &self.sweep.values {
            self.system_at(v).validate()?;
        }
        for e in &self.estimators {
            match (e.kind.needs_rank(), e.rank) {
                (true, None) => {
                    return Err(ConfigError::Invalid(format!(
                        "estimator {} requires a rank",
                        e.kind.name()
                    )))
                }
                (true, Some(r)) if r < 1 || r > self.system.antennas => {
                    return Err(ConfigError::Invalid(format!(
                        "1 ≤ rank ≤ antennas for {}",
                        e.label()
                    )))
                }
                _ => {}
            }
            if e.kind.is_data_driven() {
                for &v in &self.sweep.values {
                    if self.system_at(v).tau_p < 2 {
                        return Err(ConfigError::Invalid(format!(
                            "tau_p ≥ 2 for covariance-estimating estimator {}",
                            e.label()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
