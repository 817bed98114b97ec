//! Linear channel estimators operating on despread pilot signals.
//!
//! Every filter `W` produces the estimate `ĥ = Wᴴ·y` from the despread vector
//! `y` of the UE's own pilot.

use num_complex::Complex64;
use thiserror::Error;

use crate::channel::LinkCovariances;
use crate::covest::LowRankCovEstimate;
use crate::linalg::{cholesky, CMatrix, CVector, HermitianMatrix, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    Optimal,
    Approximate,
    Improved,
    MmseFixed,
    LeastSquares,
}

#[derive(Clone, Debug)]
pub struct MmseFilter {
    pub w: CMatrix,
    pub ue: usize,
    pub kind: FilterKind,
    /// Only the improved filter depends on the current block's pilots.
    pub block_dependent: bool,
    /// Diagonal loading had to be added to factor the filter's matrix.
    pub loaded: bool,
}

impl MmseFilter {
    pub fn estimate(&self, y_pilot: &CVector) -> CVector {
        self.w.ad_mul(y_pilot)
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorOutput {
    pub h_hat: CVector,
    pub kind: FilterKind,
    pub rank_effective: Option<usize>,
}

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Solves `M·W = rhs` after factoring `M`, retrying once with
/// `loading_factor·(tr/N)·I` added. Returns whether loading was needed.
fn solve_with_loading(
    m: &HermitianMatrix,
    rhs: &CMatrix,
    loading_factor: f64,
) -> Result<(CMatrix, bool), LinalgError> {
    match cholesky(m) {
        Ok(f) => Ok((f.solve(rhs), false)),
        Err(LinalgError::NotPositiveDefinite { .. }) if loading_factor > 0.0 => {
            let f = cholesky(&m.with_loading(loading_factor))?;
            Ok((f.solve(rhs), true))
        }
        Err(e) => Err(e),
    }
}

/// `W = √p·R_pilot⁻¹·R`.
pub fn mmse_optimal_filter(
    r_pilot: &HermitianMatrix,
    r_true: &HermitianMatrix,
    power: f64,
    ue: usize,
) -> Result<MmseFilter, EstimatorError> {
    mmse_filter_with_loading(r_pilot, r_true, power, ue, 0.0)
}

/// [`mmse_optimal_filter`] that loads `r_pilot` once when it fails to factor.
pub fn mmse_filter_with_loading(
    r_pilot: &HermitianMatrix,
    r_signal: &HermitianMatrix,
    power: f64,
    ue: usize,
    loading_factor: f64,
) -> Result<MmseFilter, EstimatorError> {
    let (w, loaded) = solve_with_loading(r_pilot, r_signal.as_matrix(), loading_factor)?;
    Ok(MmseFilter {
        w: w * real(power.sqrt()),
        ue,
        kind: FilterKind::Optimal,
        block_dependent: false,
        loaded,
    })
}

/// `υ_r = (σ_r − 1)/((τp − 1)·σ_r)`
pub fn upsilon(estimate: &LowRankCovEstimate) -> Vec<f64> {
    let denom = (estimate.tau_p - 1) as f64;
    estimate
        .sigma_r
        .iter()
        .map(|s| (s - 1.0) / (denom * s))
        .collect()
}

/// `W = (1/√p)·X_R·diag(υ)·Q_Rᴴ`, the MMSE filter built from the pencil
/// `{R_pilot, R_all}` after rank truncation.
pub fn approx_mmse_filter(estimate: &LowRankCovEstimate, power: f64, ue: usize) -> MmseFilter {
    let n = estimate.dim();
    let ups = upsilon(estimate);
    let mut xu = estimate.x_r.clone();
    for (c, &u) in ups.iter().enumerate() {
        xu.column_mut(c).scale_mut(u / power.sqrt());
    }
    let w = if ups.is_empty() {
        CMatrix::zeros(n, n)
    } else {
        xu * estimate.q_r.adjoint()
    };
    MmseFilter {
        w,
        ue,
        kind: FilterKind::Approximate,
        block_dependent: false,
        loaded: false,
    }
}

/// `ĥ = (1/√p)·Σ_r q_r·υ_r·(x_rᴴ·y)`
pub fn approx_mmse_estimate(
    estimate: &LowRankCovEstimate,
    power: f64,
    y_pilot: &CVector,
) -> EstimatorOutput {
    let ups = upsilon(estimate);
    let mut h_hat = CVector::zeros(estimate.dim());
    for (r, &u) in ups.iter().enumerate() {
        let z = estimate.x_r.column(r).dotc(y_pilot) * u;
        h_hat.axpy(z, &estimate.q_r.column(r), real(1.0));
    }
    EstimatorOutput {
        h_hat: h_hat / real(power.sqrt()),
        kind: FilterKind::Approximate,
        rank_effective: Some(estimate.rank_effective),
    }
}

/// Block-dependent improved MMSE filter of UE `ue` in the BS's own cell.
///
/// `scaled` holds `p_i·R_i` for every UE `i` of the cell and `pilots` their
/// pilot indices in the current block. The filter matrix is
/// `M = pilot_cov + Σ_{i≠k} c_i·p_i·R_i` with `c_i = τp − 1` when UE `i`
/// shares UE `k`'s pilot and `c_i = −1` otherwise, and `W = √p_k·M⁻¹·R_k`.
pub fn improved_mmse_filter(
    pilot_cov: &HermitianMatrix,
    scaled: &[HermitianMatrix],
    pilots: &[usize],
    tau_p: usize,
    ue: usize,
    power: f64,
    loading_factor: f64,
) -> Result<MmseFilter, EstimatorError> {
    assert_eq!(scaled.len(), pilots.len());
    let m = improved_pilot_matrix(pilot_cov, scaled, pilots, tau_p, ue);
    let r_k = scaled[ue].scaled(1.0 / power);
    let (w, loaded) = solve_with_loading(&m, r_k.as_matrix(), loading_factor)?;
    Ok(MmseFilter {
        w: w * real(power.sqrt()),
        ue,
        kind: FilterKind::Improved,
        block_dependent: true,
        loaded,
    })
}

/// `pilot_cov + Σ_{i≠k} (δ_i·τp − 1)·p_i·R_i`
pub fn improved_pilot_matrix(
    pilot_cov: &HermitianMatrix,
    scaled: &[HermitianMatrix],
    pilots: &[usize],
    tau_p: usize,
    ue: usize,
) -> HermitianMatrix {
    let mut m = pilot_cov.clone();
    for (i, s) in scaled.iter().enumerate() {
        if i == ue {
            continue;
        }
        let weight = if pilots[i] == pilots[ue] {
            tau_p as f64 - 1.0
        } else {
            -1.0
        };
        m.add_scaled(weight, s);
    }
    m
}

/// Improved filter from GEVD estimates of the whole cell.
pub fn improved_mmse_filter_from_estimates(
    pilot_cov: &HermitianMatrix,
    cell: &[LowRankCovEstimate],
    pilots: &[usize],
    ue: usize,
    power: f64,
    loading_factor: f64,
) -> Result<MmseFilter, EstimatorError> {
    let tau_p = cell[ue].tau_p;
    let scaled: Vec<HermitianMatrix> = cell.iter().map(|e| e.scaled_matrix.clone()).collect();
    improved_mmse_filter(pilot_cov, &scaled, pilots, tau_p, ue, power, loading_factor)
}

/// `ĥ = y/(√p·τp)`
pub fn ls_estimate(y_pilot: &CVector, power: f64, tau_p: usize) -> EstimatorOutput {
    EstimatorOutput {
        h_hat: y_pilot / real(power.sqrt() * tau_p as f64),
        kind: FilterKind::LeastSquares,
        rank_effective: None,
    }
}

/// LMMSE filter for a fixed pilot allocation with known covariances:
/// `W = √p·(p·τp·R + Σ_{shared} p_i·τp·R_i + R_nn)⁻¹·R`.
///
/// `pilots` is the fixed allocation of every UE in `links` order.
pub fn mmse_fixed_filter(
    links: &LinkCovariances,
    powers: &[f64],
    pilots: &[usize],
    r_nn: &HermitianMatrix,
    tau_p: usize,
    ue: usize,
) -> Result<MmseFilter, EstimatorError> {
    let own = links.index(links.bs, ue);
    let mut m = r_nn.clone();
    for (idx, cov) in links.covariances.iter().enumerate() {
        if pilots[idx] == pilots[own] {
            m.add_scaled(powers[idx] * tau_p as f64, &cov.matrix);
        }
    }
    let r = links.covariances[own].matrix.as_matrix();
    let w = cholesky(&m)?.solve(r) * real(powers[own].sqrt());
    Ok(MmseFilter {
        w,
        ue,
        kind: FilterKind::MmseFixed,
        block_dependent: false,
        loaded: false,
    })
}
