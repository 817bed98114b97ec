//! Pilot sequences, pilot allocation and received-signal synthesis.
//!
//! Pilot indices are zero-based throughout: a book of length `τp` holds
//! pilots `0..τp`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelRealization;
use crate::linalg::{cholesky, CMatrix, CVector, HermitianMatrix, LinalgError};
use crate::rng::{self, complex_normal, unit_phase};

/// `τp` orthogonal unit-modulus pilot sequences, one per row.
#[derive(Clone, Debug)]
pub struct PilotBook {
    tau_p: usize,
    sequences: CMatrix,
}

impl PilotBook {
    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn sequences(&self) -> &CMatrix {
        &self.sequences
    }

    /// Symbol `s_b(p)`.
    pub fn symbol(&self, b: usize, p: usize) -> Complex64 {
        self.sequences[(b, p)]
    }

    pub fn sequence(&self, b: usize) -> CVector {
        self.sequences.row(b).transpose()
    }
}

/// DFT pilot book: `s_b(p) = exp(−2πi·b·p/τp)`.
pub fn make_pilot_book(tau_p: usize) -> PilotBook {
    assert!(tau_p >= 1, "tau_p ≥ 1");
    let sequences = CMatrix::from_fn(tau_p, tau_p, |b, p| {
        // reduce the exponent first so large b·p keep full precision
        let k = (b * p) % tau_p;
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / tau_p as f64)
    });
    PilotBook { tau_p, sequences }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    /// Every UE draws a pilot uniformly at random in every block.
    Random,
    /// Fixed over time; assigned cyclically in UE order, continuing across cells.
    FixedCyclic,
}

/// Pilot index of every UE in every block.
#[derive(Clone, Debug)]
pub struct PilotAllocation {
    mode: AllocationMode,
    tau_p: usize,
    blocks: usize,
    num_cells: usize,
    ues_per_cell: usize,
    /// `[t][cell][ue]` flattened; a single block for the fixed mode.
    indices: Vec<usize>,
}

impl PilotAllocation {
    pub fn mode(&self) -> AllocationMode {
        self.mode
    }

    pub fn tau_p(&self) -> usize {
        self.tau_p
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    fn stride(&self) -> usize {
        self.num_cells * self.ues_per_cell
    }

    /// Pilots of all UEs in block `t`, `(cell, ue)` order.
    pub fn row(&self, t: usize) -> &[usize] {
        assert!(t < self.blocks, "block {t} out of range");
        let offset = match self.mode {
            AllocationMode::Random => t * self.stride(),
            AllocationMode::FixedCyclic => 0,
        };
        &self.indices[offset..offset + self.stride()]
    }

    pub fn index(&self, t: usize, cell: usize, ue: usize) -> usize {
        self.row(t)[cell * self.ues_per_cell + ue]
    }
}

pub fn allocate_pilots(
    blocks: usize,
    num_cells: usize,
    ues_per_cell: usize,
    tau_p: usize,
    mode: AllocationMode,
    seed: u64,
) -> PilotAllocation {
    assert!(tau_p >= 1, "tau_p ≥ 1");
    let per_block = num_cells * ues_per_cell;
    let indices = match mode {
        AllocationMode::FixedCyclic => (0..per_block).map(|i| i % tau_p).collect(),
        AllocationMode::Random => {
            let mut rng = rng::rng_from(seed, &[rng::stream::ALLOCATION]);
            (0..blocks * per_block)
                .map(|_| rng.random_range(0..tau_p))
                .collect()
        }
    };
    PilotAllocation {
        mode,
        tau_p,
        blocks,
        num_cells,
        ues_per_cell,
        indices,
    }
}

/// `σ²·I + ρ·a·aᴴ`, white noise plus an optional jammer with steering vector `a`.
pub fn make_noise_covariance(
    n: usize,
    noise_power: f64,
    jammer: Option<(&CVector, f64)>,
) -> HermitianMatrix {
    let mut r = HermitianMatrix::identity(n).scaled(noise_power);
    if let Some((a, power)) = jammer {
        r.add_scaled(power, &HermitianMatrix::outer(a));
    }
    r
}

/// Draws noise samples `F·z` with `F·Fᴴ = R_nn`.
#[derive(Clone, Debug)]
pub struct NoiseGenerator {
    factor: CMatrix,
}

impl NoiseGenerator {
    pub fn new(r_nn: &HermitianMatrix) -> Result<Self, LinalgError> {
        Ok(Self {
            factor: cholesky(r_nn)?.into_lower(),
        })
    }

    /// Noiseless generator, for tests.
    pub fn silent(n: usize) -> Self {
        Self {
            factor: CMatrix::zeros(n, n),
        }
    }

    pub fn antennas(&self) -> usize {
        self.factor.nrows()
    }

    /// `N × samples` matrix of independent noise columns.
    pub fn sample<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> CMatrix {
        let z = CMatrix::from_fn(self.factor.ncols(), samples, |_, _| complex_normal(rng));
        &self.factor * z
    }
}

/// Received pilot-phase and data-phase samples of one block at one BS.
#[derive(Clone, Debug)]
pub struct BlockSignals {
    pub t: usize,
    /// `N × τp`
    pub pilot_rx: CMatrix,
    /// `N × τu`
    pub data_rx: CMatrix,
}

impl BlockSignals {
    /// Applies `T` to every antenna sample (linear combining at the array).
    pub fn transformed(&self, t: &CMatrix) -> Self {
        Self {
            t: self.t,
            pilot_rx: t * &self.pilot_rx,
            data_rx: t * &self.data_rx,
        }
    }
}

/// Columns `√p·h` for every UE.
fn scaled_channels(channels: &ChannelRealization, powers: &[f64], n: usize) -> CMatrix {
    assert_eq!(channels.h.len(), powers.len());
    let mut h = CMatrix::zeros(n, channels.h.len());
    for (u, (hu, &p)) in channels.h.iter().zip(powers).enumerate() {
        h.set_column(u, &(hu * Complex64::new(p.sqrt(), 0.0)));
    }
    h
}

/// `y(p) = Σ √p·h·s_b(p) + n(p)` for `p = 0..τp`.
pub fn simulate_pilot_phase<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    pilots: &[usize],
    book: &PilotBook,
    powers: &[f64],
    noise: &NoiseGenerator,
    rng: &mut R,
) -> CMatrix {
    let n = noise.antennas();
    let h = scaled_channels(channels, powers, n);
    let s = CMatrix::from_fn(pilots.len(), book.tau_p(), |u, p| book.symbol(pilots[u], p));
    h * s + noise.sample(book.tau_p(), rng)
}

/// `y(u) = Σ √p·h·s(u) + n(u)` for `u = 0..τu`, unit-modulus random-phase data.
pub fn simulate_data_phase<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    tau_u: usize,
    powers: &[f64],
    noise: &NoiseGenerator,
    rng: &mut R,
) -> CMatrix {
    let n = noise.antennas();
    let h = scaled_channels(channels, powers, n);
    let d = CMatrix::from_fn(channels.h.len(), tau_u, |_, _| unit_phase(rng));
    h * d + noise.sample(tau_u, rng)
}

/// Both phases of block `t`.
pub fn simulate_block<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    pilots: &[usize],
    book: &PilotBook,
    tau_u: usize,
    powers: &[f64],
    noise: &NoiseGenerator,
    rng: &mut R,
) -> BlockSignals {
    let pilot_rx = simulate_pilot_phase(channels, pilots, book, powers, noise, rng);
    let data_rx = simulate_data_phase(channels, tau_u, powers, noise, rng);
    BlockSignals {
        t: channels.t,
        pilot_rx,
        data_rx,
    }
}

/// `Σ_p y(p)·conj(s_b(p))`
pub fn despread(pilot_rx: &CMatrix, book: &PilotBook, b: usize) -> CVector {
    assert_eq!(pilot_rx.ncols(), book.tau_p());
    let conj_seq = CVector::from_fn(book.tau_p(), |p, _| book.symbol(b, p).conj());
    pilot_rx * conj_seq
}
