//! Monte-Carlo NMSE experiments.
//!
//! One run draws a geometry, simulates `T` coherence blocks at the center BS
//! to estimate covariances, builds every requested estimator and measures its
//! NMSE on `eval_blocks` fresh blocks. Estimation and evaluation blocks come
//! from separate seed streams, so they never share data.
//!
//! Seeds: `master → run → (phase, block)`. The run seed does not depend on
//! the sweep value, so all sweep points of one run see the same geometry and
//! nested estimation data.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airlink::{
    allocate_pilots, despread, make_noise_covariance, make_pilot_book, simulate_block,
    simulate_pilot_phase, AllocationMode, NoiseGenerator,
};
use crate::channel::{
    build_geometry, link_covariances, steering_vector, ChannelError, ChannelSampler,
    LinkCovariances,
};
use crate::config::{
    ConfigError, EstimatorKind, EstimatorSpec, ExperimentConfig, SweepVariable, SystemConfig,
};
use crate::covest::{
    analytic_all_cov, analytic_pilot_cov, gevd_lowrank_with_loading, subtraction_estimator,
    AllCovAccumulator, CovEstError, LowRankCovEstimate, PilotCovAccumulator,
};
use crate::estimators::{
    approx_mmse_filter, improved_mmse_filter, ls_estimate, mmse_filter_with_loading,
    mmse_fixed_filter, EstimatorError, MmseFilter,
};
use crate::linalg::{CVector, HermitianMatrix, LinalgError};
use crate::rng::{self, derive_seed, stream};

/// The BS whose UEs are evaluated.
pub const CENTER_BS: usize = 0;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("channel covariance has zero trace")]
    ZeroTraceCovariance,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    CovEst(#[from] CovEstError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("run {run} at {variable} = {value}: {source}")]
    Run {
        run: usize,
        variable: &'static str,
        value: usize,
        #[source]
        source: Box<HarnessError>,
    },
}

/// `‖h − ĥ‖² / tr(R̄)` for one realization.
pub fn nmse(
    h_true: &CVector,
    h_hat: &CVector,
    r_bar: &HermitianMatrix,
) -> Result<f64, HarnessError> {
    let tr = r_bar.trace();
    if !(tr > 0.0) {
        return Err(HarnessError::ZeroTraceCovariance);
    }
    Ok((h_true - h_hat).norm_squared() / tr)
}

/// True second-order statistics seen by the center BS.
#[derive(Clone, Debug)]
pub struct Network {
    pub links: LinkCovariances,
    pub powers: Vec<f64>,
    pub r_nn: HermitianMatrix,
}

pub fn noise_covariance(sys: &SystemConfig) -> HermitianMatrix {
    let jammer = sys.jammer.as_ref().map(|j| {
        (
            steering_vector(sys.antennas, j.angle_deg.to_radians()),
            j.power,
        )
    });
    make_noise_covariance(
        sys.antennas,
        sys.noise_power,
        jammer.as_ref().map(|(a, p)| (a, *p)),
    )
}

/// Geometry and local-scattering covariances towards the center BS.
pub fn build_network(sys: &SystemConfig, run_seed: u64) -> Result<Network, HarnessError> {
    let geometry = build_geometry(sys, run_seed)?;
    let links = link_covariances(
        &geometry,
        CENTER_BS,
        sys.antennas,
        sys.angular_half_spread(),
    )?;
    Ok(Network {
        powers: vec![sys.ue_power; links.len()],
        links,
        r_nn: noise_covariance(sys),
    })
}

/// Where the covariances fed to the data-driven estimators come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceSource {
    /// Sample averages over `T` simulated blocks.
    Sampled,
    /// The exact expectations (infinite `T`).
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BlockPhase {
    Estimation,
    Evaluation,
}

/// Identifies which seed stream produced a simulated block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub phase: BlockPhase,
    pub index: usize,
}

impl BlockId {
    fn seed_path(self) -> [u64; 2] {
        let s = match self.phase {
            BlockPhase::Estimation => stream::ESTIMATION_BLOCK,
            BlockPhase::Evaluation => stream::EVALUATION_BLOCK,
        };
        [s, self.index as u64]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorRunStats {
    pub spec: EstimatorSpec,
    pub nmse: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub sweep_value: usize,
    pub run_seed: u64,
    pub stats: Vec<EstimatorRunStats>,
    pub blocks: Vec<BlockId>,
}

enum Prepared {
    LeastSquares,
    /// One static filter per center-cell UE.
    Static(Vec<MmseFilter>),
    /// Block-dependent improved filter; `fallback` is used when it cannot be built.
    Improved {
        pilot: Vec<HermitianMatrix>,
        scaled: Vec<HermitianMatrix>,
        fallback: Vec<MmseFilter>,
    },
}

struct Evaluator {
    spec: EstimatorSpec,
    prepared: Prepared,
    fallbacks: usize,
    error_sum: f64,
    samples: usize,
}

struct EstimatedCovariances {
    pilot: Vec<HermitianMatrix>,
    all: HermitianMatrix,
}

fn estimate_covariances(
    sys: &SystemConfig,
    net: &Network,
    sampler: &ChannelSampler,
    noise: &NoiseGenerator,
    run_seed: u64,
    blocks: &mut Vec<BlockId>,
) -> EstimatedCovariances {
    let k = sys.ues_per_cell;
    let book = make_pilot_book(sys.tau_p);
    let alloc = allocate_pilots(
        sys.blocks,
        sys.num_cells,
        k,
        sys.tau_p,
        AllocationMode::Random,
        derive_seed(run_seed, &[stream::ESTIMATION_BLOCK]),
    );
    let mut all = AllCovAccumulator::new(sys.antennas);
    let mut pilot: Vec<PilotCovAccumulator> = (0..k)
        .map(|_| PilotCovAccumulator::new(sys.antennas, sys.tau_p))
        .collect();
    for t in 0..sys.blocks {
        let id = BlockId {
            phase: BlockPhase::Estimation,
            index: t,
        };
        blocks.push(id);
        let mut rng = rng::rng_from(run_seed, &id.seed_path());
        let ch = sampler.sample(t, &mut rng);
        let blk = simulate_block(
            &ch,
            alloc.row(t),
            &book,
            sys.tau_u,
            &net.powers,
            noise,
            &mut rng,
        );
        all.add(&blk);
        for (ue, acc) in pilot.iter_mut().enumerate() {
            let b = alloc.index(t, CENTER_BS, ue);
            acc.add(&despread(&blk.pilot_rx, &book, b));
        }
    }
    EstimatedCovariances {
        pilot: pilot
            .iter()
            .enumerate()
            .map(|(ue, acc)| acc.finish(CENTER_BS, ue, 0.0).matrix)
            .collect(),
        all: all.finish(CENTER_BS).matrix,
    }
}

fn prepare(
    spec: EstimatorSpec,
    sys: &SystemConfig,
    net: &Network,
    estimated: Option<&EstimatedCovariances>,
    lowrank: &mut BTreeMap<usize, (Vec<LowRankCovEstimate>, usize)>,
) -> Result<Evaluator, HarnessError> {
    let k_count = sys.ues_per_cell;
    let links = &net.links;
    let own = |ue: usize| links.index(CENTER_BS, ue);
    let loading = sys.loading_factor;
    let mut fallbacks = 0;

    let true_pilot = |ue: usize| analytic_pilot_cov(links, &net.powers, sys.tau_p, &net.r_nn, ue);
    let true_optimal = || -> Result<Vec<MmseFilter>, HarnessError> {
        (0..k_count)
            .map(|ue| {
                Ok(mmse_filter_with_loading(
                    &true_pilot(ue),
                    links.get(CENTER_BS, ue),
                    net.powers[own(ue)],
                    ue,
                    0.0,
                )?)
            })
            .collect()
    };

    let mut gevd_estimates =
        |rank: usize| -> Result<(Vec<LowRankCovEstimate>, usize), HarnessError> {
            if let Some(hit) = lowrank.get(&rank) {
                return Ok(hit.clone());
            }
            let est = estimated.expect("covariances estimated for data-driven estimators");
            let mut loaded_count = 0;
            let mut out = Vec::with_capacity(k_count);
            for ue in 0..k_count {
                let (e, loaded) =
                    gevd_lowrank_with_loading(&est.pilot[ue], &est.all, sys.tau_p, rank, loading)?;
                loaded_count += usize::from(loaded);
                out.push(e);
            }
            lowrank.insert(rank, (out.clone(), loaded_count));
            Ok((out, loaded_count))
        };

    let prepared = match spec.kind {
        EstimatorKind::LsFixed => Prepared::LeastSquares,
        EstimatorKind::MmseFixed => {
            let fixed = allocate_pilots(
                1,
                sys.num_cells,
                k_count,
                sys.tau_p,
                AllocationMode::FixedCyclic,
                0,
            );
            Prepared::Static(
                (0..k_count)
                    .map(|ue| {
                        mmse_fixed_filter(
                            links,
                            &net.powers,
                            fixed.row(0),
                            &net.r_nn,
                            sys.tau_p,
                            ue,
                        )
                    })
                    .collect::<Result<_, _>>()?,
            )
        }
        EstimatorKind::MmseRandom => Prepared::Static(true_optimal()?),
        EstimatorKind::MmseRandomImpr => Prepared::Improved {
            pilot: (0..k_count).map(true_pilot).collect(),
            scaled: (0..k_count)
                .map(|ue| links.get(CENTER_BS, ue).scaled(net.powers[own(ue)]))
                .collect(),
            fallback: true_optimal()?,
        },
        EstimatorKind::Subt => {
            let est = estimated.expect("covariances estimated for data-driven estimators");
            let mut filters = Vec::with_capacity(k_count);
            for ue in 0..k_count {
                let p = net.powers[own(ue)];
                let r = subtraction_estimator(&est.pilot[ue], &est.all, sys.tau_p, p)?;
                let f = mmse_filter_with_loading(&est.pilot[ue], &r, p, ue, loading)?;
                fallbacks += usize::from(f.loaded);
                filters.push(f);
            }
            Prepared::Static(filters)
        }
        EstimatorKind::Gevd => {
            let (estimates, loaded) = gevd_estimates(spec.rank.expect("validated"))?;
            fallbacks += loaded;
            Prepared::Static(
                estimates
                    .iter()
                    .enumerate()
                    .map(|(ue, e)| approx_mmse_filter(e, net.powers[own(ue)], ue))
                    .collect(),
            )
        }
        EstimatorKind::GevdImpr => {
            let (estimates, loaded) = gevd_estimates(spec.rank.expect("validated"))?;
            fallbacks += loaded;
            let est = estimated.expect("covariances estimated for data-driven estimators");
            Prepared::Improved {
                pilot: est.pilot.clone(),
                scaled: estimates.iter().map(|e| e.scaled_matrix.clone()).collect(),
                fallback: estimates
                    .iter()
                    .enumerate()
                    .map(|(ue, e)| approx_mmse_filter(e, net.powers[own(ue)], ue))
                    .collect(),
            }
        }
    };
    Ok(Evaluator {
        spec,
        prepared,
        fallbacks,
        error_sum: 0.0,
        samples: 0,
    })
}

/// Runs every estimator in `estimators` on one network.
pub fn evaluate_network(
    sys: &SystemConfig,
    estimators: &[EstimatorSpec],
    net: &Network,
    run_seed: u64,
    source: CovarianceSource,
) -> Result<RunOutcome, HarnessError> {
    let k_count = sys.ues_per_cell;
    let sampler = ChannelSampler::new(&net.links)?;
    let noise = NoiseGenerator::new(&net.r_nn)?;
    let book = make_pilot_book(sys.tau_p);
    let mut blocks = Vec::new();

    let needs_estimates = estimators.iter().any(|e| e.kind.is_data_driven());
    let estimated = match (needs_estimates, source) {
        (false, _) => None,
        (true, CovarianceSource::Sampled) => Some(estimate_covariances(
            sys,
            net,
            &sampler,
            &noise,
            run_seed,
            &mut blocks,
        )),
        (true, CovarianceSource::Analytic) => Some(EstimatedCovariances {
            pilot: (0..k_count)
                .map(|ue| analytic_pilot_cov(&net.links, &net.powers, sys.tau_p, &net.r_nn, ue))
                .collect(),
            all: analytic_all_cov(&net.links, &net.powers, &net.r_nn),
        }),
    };

    let mut lowrank = BTreeMap::new();
    let mut evaluators = estimators
        .iter()
        .map(|&spec| prepare(spec, sys, net, estimated.as_ref(), &mut lowrank))
        .collect::<Result<Vec<_>, _>>()?;

    let any_fixed = estimators.iter().any(|e| e.kind.uses_fixed_allocation());
    let random_alloc = allocate_pilots(
        sys.eval_blocks,
        sys.num_cells,
        k_count,
        sys.tau_p,
        AllocationMode::Random,
        derive_seed(run_seed, &[stream::EVALUATION_BLOCK]),
    );
    let fixed_alloc = allocate_pilots(
        1,
        sys.num_cells,
        k_count,
        sys.tau_p,
        AllocationMode::FixedCyclic,
        0,
    );
    let traces: Vec<f64> = (0..k_count)
        .map(|ue| net.links.get(CENTER_BS, ue).trace())
        .collect();
    if traces.iter().any(|&t| !(t > 0.0)) {
        return Err(HarnessError::ZeroTraceCovariance);
    }

    for e in 0..sys.eval_blocks {
        let id = BlockId {
            phase: BlockPhase::Evaluation,
            index: e,
        };
        blocks.push(id);
        let mut rng = rng::rng_from(run_seed, &id.seed_path());
        let ch = sampler.sample(e, &mut rng);
        let random_row = random_alloc.row(e);
        let y_random = simulate_pilot_phase(&ch, random_row, &book, &net.powers, &noise, &mut rng);
        let y_fixed = any_fixed.then(|| {
            simulate_pilot_phase(
                &ch,
                fixed_alloc.row(0),
                &book,
                &net.powers,
                &noise,
                &mut rng,
            )
        });
        let cell_pilots =
            &random_row[net.links.index(CENTER_BS, 0)..net.links.index(CENTER_BS, k_count - 1) + 1];

        for ue in 0..k_count {
            let idx = net.links.index(CENTER_BS, ue);
            let h = &ch.h[idx];
            let p = net.powers[idx];
            let yr = despread(&y_random, &book, random_row[idx]);
            let yf = y_fixed
                .as_ref()
                .map(|y| despread(y, &book, fixed_alloc.row(0)[idx]));
            for ev in evaluators.iter_mut() {
                let h_hat = match &ev.prepared {
                    Prepared::LeastSquares => {
                        ls_estimate(yf.as_ref().expect("fixed pilots simulated"), p, sys.tau_p)
                            .h_hat
                    }
                    Prepared::Static(filters) => {
                        let y = if ev.spec.kind.uses_fixed_allocation() {
                            yf.as_ref().expect("fixed pilots simulated")
                        } else {
                            &yr
                        };
                        filters[ue].estimate(y)
                    }
                    Prepared::Improved {
                        pilot,
                        scaled,
                        fallback,
                    } => match improved_mmse_filter(
                        &pilot[ue],
                        scaled,
                        cell_pilots,
                        sys.tau_p,
                        ue,
                        p,
                        sys.loading_factor,
                    ) {
                        Ok(f) => {
                            ev.fallbacks += usize::from(f.loaded);
                            f.estimate(&yr)
                        }
                        Err(_) => {
                            ev.fallbacks += 1;
                            fallback[ue].estimate(&yr)
                        }
                    },
                };
                ev.error_sum += (h - &h_hat).norm_squared() / traces[ue];
                ev.samples += 1;
            }
        }
    }

    Ok(RunOutcome {
        sweep_value: 0,
        run_seed,
        stats: evaluators
            .into_iter()
            .map(|ev| EstimatorRunStats {
                spec: ev.spec,
                nmse: ev.error_sum / ev.samples as f64,
                fallbacks: ev.fallbacks,
            })
            .collect(),
        blocks,
    })
}

pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, &[stream::RUN, run as u64])
}

/// One Monte-Carlo run at one sweep point.
pub fn run_single(
    config: &ExperimentConfig,
    sweep_value: usize,
    run_seed: u64,
) -> Result<RunOutcome, HarnessError> {
    let sys = config.system_at(sweep_value);
    sys.validate()?;
    let net = build_network(&sys, run_seed)?;
    let mut outcome = evaluate_network(
        &sys,
        &config.estimators,
        &net,
        run_seed,
        CovarianceSource::Sampled,
    )?;
    outcome.sweep_value = sweep_value;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseResult {
    pub estimator: String,
    pub sweep_variable: SweepVariable,
    pub sweep_value: usize,
    /// Linear scale.
    pub nmse: f64,
    pub nmse_db: f64,
    pub runs_aggregated: usize,
    pub fallback_count: usize,
}

/// NMSE per (estimator, sweep value), estimators in config order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub sweep_variable: SweepVariable,
    pub rows: Vec<NmseResult>,
}

impl ResultTable {
    pub fn get(&self, estimator: &str, sweep_value: usize) -> Option<&NmseResult> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.sweep_value == sweep_value)
    }

    /// NMSE curve of one estimator over the sweep, in sweep order.
    pub fn curve(&self, estimator: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.estimator == estimator)
            .map(|r| (r.sweep_value, r.nmse))
            .collect()
    }
}

/// Mean of per-run statistics, summed in run order.
pub fn aggregate(
    variable: SweepVariable,
    estimators: &[EstimatorSpec],
    sweep_values: &[usize],
    outcomes: &[RunOutcome],
) -> ResultTable {
    let mut rows = Vec::with_capacity(estimators.len() * sweep_values.len());
    for (e_idx, spec) in estimators.iter().enumerate() {
        for &value in sweep_values {
            let runs: Vec<&EstimatorRunStats> = outcomes
                .iter()
                .filter(|o| o.sweep_value == value)
                .map(|o| &o.stats[e_idx])
                .collect();
            let nmse = runs.iter().map(|s| s.nmse).sum::<f64>() / runs.len() as f64;
            rows.push(NmseResult {
                estimator: spec.label(),
                sweep_variable: variable,
                sweep_value: value,
                nmse,
                nmse_db: 10.0 * nmse.log10(),
                runs_aggregated: runs.len(),
                fallback_count: runs.iter().map(|s| s.fallbacks).sum(),
            });
        }
    }
    ResultTable {
        sweep_variable: variable,
        rows,
    }
}

/// All sweep points × Monte-Carlo runs, in parallel. Results do not depend on
/// the number of worker threads.
pub fn run_sweep(config: &ExperimentConfig) -> Result<ResultTable, HarnessError> {
    config.validate()?;
    let master = config.system.seed;
    let jobs: Vec<(usize, usize)> = config
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..config.monte_carlo_runs).map(move |r| (v, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(value, run)| {
            run_single(config, value, run_seed(master, run)).map_err(|e| HarnessError::Run {
                run,
                variable: config.sweep.variable.name(),
                value,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate(
        config.sweep.variable,
        &config.estimators,
        &config.sweep.values,
        &outcomes,
    ))
}
