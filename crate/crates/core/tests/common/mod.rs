#![allow(dead_code)]

use gevd_mimo::channel::{local_scattering_covariance, LinkCovariances};
use gevd_mimo::linalg::{CMatrix, HermitianMatrix};
use gevd_mimo::rng::complex_normal;
use num_complex::Complex64;
use rand::Rng;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// `M·Mᴴ/n + shift·I`
pub fn random_pd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> HermitianMatrix {
    let m = random_matrix(rng, n, n);
    let mut h =
        HermitianMatrix::symmetrize(&m * m.adjoint() / Complex64::new(n as f64, 0.0)).unwrap();
    h.add_diagonal(shift);
    h
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> HermitianMatrix {
    let m = random_matrix(rng, n, n);
    HermitianMatrix::symmetrize(&m + m.adjoint()).unwrap()
}

/// Random PSD matrix of exact rank `rank`.
pub fn random_low_rank<R: Rng>(rng: &mut R, n: usize, rank: usize) -> HermitianMatrix {
    let f = random_matrix(rng, n, rank);
    HermitianMatrix::symmetrize(&f * f.adjoint() / Complex64::new(rank as f64, 0.0)).unwrap()
}

/// `I + 0.3·G/√n`, invertible and well conditioned with high probability.
pub fn random_transform<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let g = random_matrix(rng, n, n);
    CMatrix::identity(n, n) + g * Complex64::new(0.3 / (n as f64).sqrt(), 0.0)
}

/// Local-scattering covariances for `cells × ues` UEs at spread-out angles,
/// serving cell at gain 1, others at `interference_gain`.
pub fn scattering_links(
    n: usize,
    cells: usize,
    ues: usize,
    half_spread: f64,
    interference_gain: f64,
) -> LinkCovariances {
    let mut mats = Vec::new();
    for cell in 0..cells {
        for ue in 0..ues {
            let angle = -1.2 + 2.4 * (ue as f64 + 0.37 * cell as f64) / ues as f64;
            let gain = if cell == 0 { 1.0 } else { interference_gain };
            mats.push(local_scattering_covariance(n, angle, half_spread, gain).unwrap());
        }
    }
    LinkCovariances::from_matrices(0, ues, mats)
}
