//! Multicell geometry, local scattering covariances and correlated Rayleigh channels.
//!
//! The BS in every cell carries a half-wavelength uniform linear array with
//! broadside along the +x axis, so a plane wave from angle `φ` (measured from
//! +x) has steering vector `a(φ)[m] = exp(iπ·m·sin φ)`.
//!
//! Channels are generated per observing BS: [`LinkCovariances`] holds the
//! covariances of all `L·K` UEs as seen from one BS, flattened in `(cell, ue)`
//! order.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, SystemConfig};
use crate::linalg::{hermitian_eig, CMatrix, CVector, HermitianMatrix, LinalgError};
use crate::rng::{self, complex_normal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("unsupported layout: {num_cells} cells (supported: 1 or 7)")]
    UnsupportedLayout { num_cells: usize },
    #[error("angular half-spread must lie in (0, π/2), got {0}")]
    InvalidSpread(f64),
    #[error("link gain must be positive, got {0}")]
    InvalidGain(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<ChannelError> for ConfigError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::UnsupportedLayout { num_cells } => {
                ConfigError::UnsupportedLayout { num_cells }
            }
            other => ConfigError::Invalid(other.to_string()),
        }
    }
}

pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Positions of every BS and UE plus the derived angles and large-scale gains.
#[derive(Clone, Debug)]
pub struct NetworkGeometry {
    pub num_cells: usize,
    pub ues_per_cell: usize,
    pub cell_radius: f64,
    pub ring_radius: f64,
    pub pathloss_exponent: f64,
    pub bs_positions: Vec<Point>,
    /// `[cell][ue]`, UEs of each cell ordered left to right.
    pub ue_positions: Vec<Vec<Point>>,
    /// `[bs][cell][ue]` angle from the BS to the UE, radians.
    pub nominal_angles: Vec<Vec<Vec<f64>>>,
    /// `[bs][cell][ue]` large-scale gain, 1 at the ring radius.
    pub link_gains: Vec<Vec<Vec<f64>>>,
}

impl NetworkGeometry {
    /// Gain at distance `d`, normalized to 1 at the UE ring radius.
    pub fn pathloss(&self, d: f64) -> f64 {
        (d / self.ring_radius).powf(-self.pathloss_exponent)
    }
}

/// Hexagonal layout: one cell at the origin, optionally surrounded by six
/// neighbors at distance `√3·cell_radius`. Each cell's UEs sit on a ring with
/// equal angular spacing and a seeded random rotation.
pub fn build_geometry(config: &SystemConfig, seed: u64) -> Result<NetworkGeometry, ChannelError> {
    let l = config.num_cells;
    if l != 1 && l != 7 {
        return Err(ChannelError::UnsupportedLayout { num_cells: l });
    }
    let k = config.ues_per_cell;
    let spacing = 3f64.sqrt() * config.cell_radius;
    let mut bs_positions = vec![[0.0, 0.0]];
    for i in 0..(l - 1) {
        let angle = PI / 6.0 + i as f64 * PI / 3.0;
        bs_positions.push([spacing * angle.cos(), spacing * angle.sin()]);
    }

    let mut rng = rng::rng_from(seed, &[rng::stream::GEOMETRY]);
    let ue_positions: Vec<Vec<Point>> = bs_positions
        .iter()
        .map(|bs| {
            let rotation: f64 = rng.random_range(0.0..2.0 * PI);
            let mut ues: Vec<Point> = (0..k)
                .map(|i| {
                    let a = rotation + 2.0 * PI * i as f64 / k as f64;
                    [
                        bs[0] + config.ring_radius * a.cos(),
                        bs[1] + config.ring_radius * a.sin(),
                    ]
                })
                .collect();
            ues.sort_by(|a, b| a[0].total_cmp(&b[0]));
            ues
        })
        .collect();

    let mut geometry = NetworkGeometry {
        num_cells: l,
        ues_per_cell: k,
        cell_radius: config.cell_radius,
        ring_radius: config.ring_radius,
        pathloss_exponent: config.pathloss_exponent,
        bs_positions,
        ue_positions,
        nominal_angles: Vec::new(),
        link_gains: Vec::new(),
    };
    for bs in &geometry.bs_positions {
        let mut angles = Vec::with_capacity(l);
        let mut gains = Vec::with_capacity(l);
        for cell in &geometry.ue_positions {
            angles.push(
                cell.iter()
                    .map(|ue| (ue[1] - bs[1]).atan2(ue[0] - bs[0]))
                    .collect(),
            );
            gains.push(
                cell.iter()
                    .map(|ue| geometry.pathloss(distance(*bs, *ue)))
                    .collect(),
            );
        }
        geometry.nominal_angles.push(angles);
        geometry.link_gains.push(gains);
    }
    Ok(geometry)
}

/// Identifies a channel covariance by observing BS, UE cell and UE index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LinkId {
    pub bs: usize,
    pub cell: usize,
    pub ue: usize,
}

#[derive(Clone, Debug)]
pub struct ChannelCovariance {
    pub matrix: HermitianMatrix,
    pub owner: LinkId,
}

/// Half-wavelength ULA steering vector.
pub fn steering_vector(n: usize, angle: f64) -> CVector {
    let s = angle.sin();
    CVector::from_fn(n, |m, _| Complex64::from_polar(1.0, PI * m as f64 * s))
}

/// Covariance of a UE whose multipath arrives uniformly over `[φ−Δ, φ+Δ]`.
///
/// Entry `(m, n)` is `β/(2Δ)·∫ exp(iπ(m−n)·sin θ) dθ`, evaluated with
/// Gauss–Legendre quadrature. The matrix is Toeplitz, so only the first
/// column is integrated.
pub fn local_scattering_covariance(
    n: usize,
    nominal_angle: f64,
    half_spread: f64,
    gain: f64,
) -> Result<HermitianMatrix, ChannelError> {
    if !(half_spread > 0.0 && half_spread < PI / 2.0) {
        return Err(ChannelError::InvalidSpread(half_spread));
    }
    if !(gain > 0.0) {
        return Err(ChannelError::InvalidGain(gain));
    }
    let degree = NonZeroUsize::new(256.max(4 * n)).expect("nonzero");
    let rule = GaussLegendre::new(degree);
    let pairs = rule.as_node_weight_pairs();
    // nodes live on [-1, 1] and the weights sum to 2, so 1/(2Δ)·dθ = w/2
    let sines: Vec<(f64, f64)> = pairs
        .iter()
        .map(|&(x, w)| ((nominal_angle + half_spread * x).sin(), 0.5 * w))
        .collect();
    let mut column = vec![Complex64::new(1.0, 0.0); n];
    for (d, c) in column.iter_mut().enumerate().skip(1) {
        *c = sines
            .iter()
            .map(|&(s, w)| Complex64::from_polar(w, PI * d as f64 * s))
            .sum();
    }
    Ok(toeplitz(&column, gain))
}

/// Single-path limit `β·a(φ)·a(φ)ᴴ` of the local scattering model.
pub fn single_path_covariance(n: usize, nominal_angle: f64, gain: f64) -> HermitianMatrix {
    HermitianMatrix::outer(&steering_vector(n, nominal_angle)).scaled(gain)
}

fn toeplitz(column: &[Complex64], gain: f64) -> HermitianMatrix {
    let n = column.len();
    let m = CMatrix::from_fn(n, n, |i, j| {
        if i >= j {
            column[i - j] * gain
        } else {
            column[j - i].conj() * gain
        }
    });
    HermitianMatrix::symmetrize(m).expect("square")
}

/// Covariances of every UE in the network as seen from one BS, `(cell, ue)` order.
#[derive(Clone, Debug)]
pub struct LinkCovariances {
    pub bs: usize,
    pub num_cells: usize,
    pub ues_per_cell: usize,
    pub covariances: Vec<ChannelCovariance>,
}

impl LinkCovariances {
    /// Wraps arbitrary matrices, given in `(cell, ue)` order.
    pub fn from_matrices(bs: usize, ues_per_cell: usize, matrices: Vec<HermitianMatrix>) -> Self {
        assert!(ues_per_cell > 0 && matrices.len().is_multiple_of(ues_per_cell));
        let num_cells = matrices.len() / ues_per_cell;
        let covariances = matrices
            .into_iter()
            .enumerate()
            .map(|(idx, matrix)| ChannelCovariance {
                matrix,
                owner: LinkId {
                    bs,
                    cell: idx / ues_per_cell,
                    ue: idx % ues_per_cell,
                },
            })
            .collect();
        Self {
            bs,
            num_cells,
            ues_per_cell,
            covariances,
        }
    }

    pub fn index(&self, cell: usize, ue: usize) -> usize {
        cell * self.ues_per_cell + ue
    }

    pub fn get(&self, cell: usize, ue: usize) -> &HermitianMatrix {
        &self.covariances[self.index(cell, ue)].matrix
    }

    pub fn len(&self) -> usize {
        self.covariances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariances.is_empty()
    }

    pub fn antennas(&self) -> usize {
        self.covariances.first().map_or(0, |c| c.matrix.dim())
    }
}

/// Local-scattering covariances of all UEs towards BS `bs`.
pub fn link_covariances(
    geometry: &NetworkGeometry,
    bs: usize,
    antennas: usize,
    half_spread: f64,
) -> Result<LinkCovariances, ChannelError> {
    let mut matrices = Vec::with_capacity(geometry.num_cells * geometry.ues_per_cell);
    for cell in 0..geometry.num_cells {
        for ue in 0..geometry.ues_per_cell {
            matrices.push(local_scattering_covariance(
                antennas,
                geometry.nominal_angles[bs][cell][ue],
                half_spread,
                geometry.link_gains[bs][cell][ue],
            )?);
        }
    }
    Ok(LinkCovariances::from_matrices(
        bs,
        geometry.ues_per_cell,
        matrices,
    ))
}

/// PSD square-root factor `F` with `F·Fᴴ = H`. Eigenvalues below
/// `dim·ε·λ_max` (including small negative ones) are dropped.
pub fn psd_factor(h: &HermitianMatrix) -> Result<CMatrix, LinalgError> {
    let n = h.dim();
    let eig = hermitian_eig(h)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0);
    let cutoff = n as f64 * f64::EPSILON * top.max(0.0);
    let kept: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    Ok(CMatrix::from_fn(n, kept.len(), |r, c| {
        eig.eigenvectors[(r, kept[c])] * eig.eigenvalues[kept[c]].sqrt()
    }))
}

/// Channel vectors of one coherence block, aligned with a [`LinkCovariances`].
#[derive(Clone, Debug)]
pub struct ChannelRealization {
    pub t: usize,
    pub h: Vec<CVector>,
}

/// Precomputed covariance factors for drawing `h = F·z`, `z ~ NC(0, I)`.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    antennas: usize,
    factors: Vec<CMatrix>,
}

impl ChannelSampler {
    pub fn new(links: &LinkCovariances) -> Result<Self, ChannelError> {
        let factors = links
            .covariances
            .iter()
            .map(|c| psd_factor(&c.matrix))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            antennas: links.antennas(),
            factors,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> ChannelRealization {
        let h = self
            .factors
            .iter()
            .map(|f| {
                if f.ncols() == 0 {
                    return CVector::zeros(self.antennas);
                }
                let z = CVector::from_fn(f.ncols(), |_, _| complex_normal(rng));
                f * z
            })
            .collect();
        ChannelRealization { t, h }
    }
}

/// Draws the channels of block `t` from a stream derived from `seed`.
pub fn sample_channels(sampler: &ChannelSampler, t: usize, seed: u64) -> ChannelRealization {
    let mut rng = rng::rng_from(seed, &[rng::stream::ESTIMATION_BLOCK, t as u64]);
    sampler.sample(t, &mut rng)
}

/// Number of eigenvalues above `threshold·λ_max`.
pub fn dominant_eigenvalue_count(
    h: &HermitianMatrix,
    threshold: f64,
) -> Result<usize, LinalgError> {
    let eig = hermitian_eig(h)?;
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0);
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > threshold * top)
        .count())
}
