//! Covariance estimation from uplink data.
//!
//! Two sample covariances are available at a BS without knowing the channels:
//! the despread pilot covariance of UE `k` (after correlating with the pilot
//! it chose) and the covariance of all received samples. Their expectations
//! differ only by `p·(τp−1)·R̄` of that UE, which is what both the subtraction
//! and the GEVD estimator exploit.

use thiserror::Error;

use crate::airlink::BlockSignals;
use crate::channel::LinkCovariances;
use crate::linalg::{gevd, CMatrix, CVector, HermitianMatrix, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CovEstError {
    #[error("covariance estimators need τp ≥ 2 (got {0})")]
    DegeneratePilotCount(usize),
    #[error("rank must satisfy 1 ≤ R ≤ N (R = {rank}, N = {dim})")]
    InvalidRank { rank: usize, dim: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Running sum of outer products `Σ y·yᴴ`.
#[derive(Clone, Debug)]
pub struct OuterProductSum {
    sum: CMatrix,
    samples: usize,
}

impl OuterProductSum {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: CMatrix::zeros(dim, dim),
            samples: 0,
        }
    }

    pub fn add_vector(&mut self, y: &CVector) {
        self.sum.ger(
            num_complex::Complex64::new(1.0, 0.0),
            y,
            &y.conjugate(),
            num_complex::Complex64::new(1.0, 0.0),
        );
        self.samples += 1;
    }

    /// Adds every column of `y`.
    pub fn add_columns(&mut self, y: &CMatrix) {
        self.sum += y * y.adjoint();
        self.samples += y.ncols();
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `scale·Σ y·yᴴ`
    pub fn scaled(&self, scale: f64) -> HermitianMatrix {
        HermitianMatrix::symmetrize(self.sum.clone())
            .expect("square")
            .scaled(scale)
    }
}

/// Sample estimate of the despread pilot covariance of UE `(bs, ue)`.
#[derive(Clone, Debug)]
pub struct PilotCovEstimate {
    pub matrix: HermitianMatrix,
    pub bs: usize,
    pub ue: usize,
    pub blocks_used: usize,
    /// Absolute diagonal loading that was added.
    pub loading: f64,
}

/// Sample estimate of the covariance of all received samples at BS `bs`.
#[derive(Clone, Debug)]
pub struct AllCovEstimate {
    pub matrix: HermitianMatrix,
    pub bs: usize,
    pub blocks_used: usize,
}

/// Streaming form of [`estimate_pilot_cov`].
#[derive(Clone, Debug)]
pub struct PilotCovAccumulator {
    acc: OuterProductSum,
    tau_p: usize,
}

impl PilotCovAccumulator {
    pub fn new(dim: usize, tau_p: usize) -> Self {
        Self {
            acc: OuterProductSum::new(dim),
            tau_p,
        }
    }

    /// Adds the despread vector of one block.
    pub fn add(&mut self, despread: &CVector) {
        self.acc.add_vector(despread);
    }

    pub fn finish(&self, bs: usize, ue: usize, loading_factor: f64) -> PilotCovEstimate {
        let blocks = self.acc.samples();
        let raw = if blocks == 0 {
            HermitianMatrix::zeros(self.acc.sum.nrows())
        } else {
            self.acc.scaled(1.0 / (blocks * self.tau_p) as f64)
        };
        let dim = raw.dim().max(1) as f64;
        let loading = loading_factor * raw.trace() / dim;
        let mut matrix = raw;
        matrix.add_diagonal(loading);
        PilotCovEstimate {
            matrix,
            bs,
            ue,
            blocks_used: blocks,
            loading,
        }
    }
}

/// `(1/(T·τp))·Σ_t y_t·y_tᴴ + loading_factor·(tr/N)·I` over the despread vectors of one UE.
pub fn estimate_pilot_cov(
    despread: &[CVector],
    tau_p: usize,
    loading_factor: f64,
    bs: usize,
    ue: usize,
) -> PilotCovEstimate {
    let dim = despread.first().map_or(0, |y| y.len());
    let mut acc = PilotCovAccumulator::new(dim, tau_p);
    for y in despread {
        acc.add(y);
    }
    acc.finish(bs, ue, loading_factor)
}

/// Streaming form of [`estimate_all_cov`].
#[derive(Clone, Debug)]
pub struct AllCovAccumulator {
    acc: OuterProductSum,
    blocks: usize,
}

impl AllCovAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            acc: OuterProductSum::new(dim),
            blocks: 0,
        }
    }

    pub fn add(&mut self, block: &BlockSignals) {
        self.acc.add_columns(&block.pilot_rx);
        self.acc.add_columns(&block.data_rx);
        self.blocks += 1;
    }

    pub fn finish(&self, bs: usize) -> AllCovEstimate {
        let samples = self.acc.samples();
        let matrix = if samples == 0 {
            HermitianMatrix::zeros(self.acc.sum.nrows())
        } else {
            self.acc.scaled(1.0 / samples as f64)
        };
        AllCovEstimate {
            matrix,
            bs,
            blocks_used: self.blocks,
        }
    }
}

/// Average of `y·yᴴ` over all `T·τc` received samples, both phases.
pub fn estimate_all_cov(blocks: &[BlockSignals], bs: usize) -> AllCovEstimate {
    let dim = blocks.first().map_or(0, |b| b.pilot_rx.nrows());
    let mut acc = AllCovAccumulator::new(dim);
    for b in blocks {
        acc.add(b);
    }
    acc.finish(bs)
}

/// Expected despread pilot covariance of UE `ue` in the BS's own cell under
/// random pilot allocation: `p·τp·R̄ + Σ_{others} p·R̄ + R_nn`.
pub fn analytic_pilot_cov(
    links: &LinkCovariances,
    powers: &[f64],
    tau_p: usize,
    r_nn: &HermitianMatrix,
    ue: usize,
) -> HermitianMatrix {
    let own = links.index(links.bs, ue);
    let mut out = r_nn.clone();
    for (idx, cov) in links.covariances.iter().enumerate() {
        let weight = if idx == own { tau_p as f64 } else { 1.0 };
        out.add_scaled(weight * powers[idx], &cov.matrix);
    }
    out
}

/// Expected covariance of any received sample: `Σ p·R̄ + R_nn`.
pub fn analytic_all_cov(
    links: &LinkCovariances,
    powers: &[f64],
    r_nn: &HermitianMatrix,
) -> HermitianMatrix {
    let mut out = r_nn.clone();
    for (cov, &p) in links.covariances.iter().zip(powers) {
        out.add_scaled(p, &cov.matrix);
    }
    out
}

/// `(R_pilot − R_all)/((τp−1)·p)`. May be indefinite.
pub fn subtraction_estimator(
    pilot_cov: &HermitianMatrix,
    all_cov: &HermitianMatrix,
    tau_p: usize,
    power: f64,
) -> Result<HermitianMatrix, CovEstError> {
    if tau_p < 2 {
        return Err(CovEstError::DegeneratePilotCount(tau_p));
    }
    Ok((pilot_cov - all_cov).scaled(1.0 / ((tau_p - 1) as f64 * power)))
}

/// Generalized eigenvalues within this distance of 1 are treated as not exceeding 1.
pub const EIGENVALUE_ONE_TOLERANCE: f64 = 1e-9;

/// Rank-constrained covariance estimate from the pencil `{R_pilot, R_all}`.
#[derive(Clone, Debug)]
pub struct LowRankCovEstimate {
    /// `p·R̂ = Q_R·diag(λ_R)·Q_Rᴴ`
    pub scaled_matrix: HermitianMatrix,
    pub rank_requested: usize,
    pub rank_effective: usize,
    /// Leading columns of `Q`, `N × rank_effective`.
    pub q_r: CMatrix,
    /// Leading generalized eigenvectors, `N × rank_effective`.
    pub x_r: CMatrix,
    /// Kept generalized eigenvalues, all `> 1`.
    pub sigma_r: Vec<f64>,
    /// `(σ − 1)/(τp − 1)` for each kept mode.
    pub lambda_r: Vec<f64>,
    pub tau_p: usize,
}

impl LowRankCovEstimate {
    pub fn dim(&self) -> usize {
        self.scaled_matrix.dim()
    }

    /// Estimate of `R̄` itself for transmit power `power`.
    pub fn covariance(&self, power: f64) -> HermitianMatrix {
        self.scaled_matrix.scaled(1.0 / power)
    }
}

/// Keeps the (at most `rank`) modes of the GEVD of `{pilot_cov, all_cov}`
/// whose generalized eigenvalue exceeds one, each weighted by `(σ−1)/(τp−1)`.
pub fn gevd_lowrank_estimator(
    pilot_cov: &HermitianMatrix,
    all_cov: &HermitianMatrix,
    tau_p: usize,
    rank: usize,
) -> Result<LowRankCovEstimate, CovEstError> {
    if tau_p < 2 {
        return Err(CovEstError::DegeneratePilotCount(tau_p));
    }
    let n = pilot_cov.dim();
    if rank < 1 || rank > n {
        return Err(CovEstError::InvalidRank { rank, dim: n });
    }
    let pencil = gevd(pilot_cov, all_cov)?;
    let kept = pencil
        .eigenvalues
        .iter()
        .take(rank)
        .take_while(|&&s| s > 1.0 + EIGENVALUE_ONE_TOLERANCE)
        .count();
    let sigma_r: Vec<f64> = pencil.eigenvalues[..kept].to_vec();
    let lambda_r: Vec<f64> = sigma_r
        .iter()
        .map(|s| (s - 1.0) / (tau_p - 1) as f64)
        .collect();
    let q_r = pencil.q.columns(0, kept).into_owned();
    let x_r = pencil.x.columns(0, kept).into_owned();
    let scaled_matrix = if kept == 0 {
        HermitianMatrix::zeros(n)
    } else {
        HermitianMatrix::from_weighted_columns(&q_r, &lambda_r)
    };
    Ok(LowRankCovEstimate {
        scaled_matrix,
        rank_requested: rank,
        rank_effective: kept,
        q_r,
        x_r,
        sigma_r,
        lambda_r,
        tau_p,
    })
}

/// Same as [`gevd_lowrank_estimator`], retrying once with `loading_factor·(tr/N)·I`
/// added to `all_cov` when it is not positive definite. The flag reports the retry.
pub fn gevd_lowrank_with_loading(
    pilot_cov: &HermitianMatrix,
    all_cov: &HermitianMatrix,
    tau_p: usize,
    rank: usize,
    loading_factor: f64,
) -> Result<(LowRankCovEstimate, bool), CovEstError> {
    match gevd_lowrank_estimator(pilot_cov, all_cov, tau_p, rank) {
        Err(CovEstError::Linalg(LinalgError::NotPositiveDefinite { .. }))
            if loading_factor > 0.0 =>
        {
            let loaded = all_cov.with_loading(loading_factor);
            gevd_lowrank_estimator(pilot_cov, &loaded, tau_p, rank).map(|e| (e, true))
        }
        other => other.map(|e| (e, false)),
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::linalg::testing::random_matrix;
    use rand::Rng;

    /// Synthetic network seen from BS 0: random rank-`rank` covariances for
    /// every UE, white noise of power `noise`.
    pub struct SyntheticNetwork {
        pub links: LinkCovariances,
        pub powers: Vec<f64>,
        pub r_nn: HermitianMatrix,
    }

    pub fn synthetic_network<R: Rng>(
        rng: &mut R,
        n: usize,
        cells: usize,
        ues: usize,
        rank: usize,
        noise: f64,
    ) -> SyntheticNetwork {
        let matrices = (0..cells * ues)
            .map(|idx| {
                let w = random_matrix(rng, n, rank);
                let gain = if idx < ues { 1.0 } else { 0.1 };
                HermitianMatrix::symmetrize(&w * w.adjoint())
                    .unwrap()
                    .scaled(gain / (n * rank) as f64)
            })
            .collect();
        let powers = (0..cells * ues)
            .map(|_| rng.random_range(0.5..2.0))
            .collect();
        SyntheticNetwork {
            links: LinkCovariances::from_matrices(0, ues, matrices),
            powers,
            r_nn: HermitianMatrix::identity(n).scaled(noise),
        }
    }
}
