mod common;

use gevd_mimo::airlink::{
    allocate_pilots, despread, make_noise_covariance, make_pilot_book, simulate_block,
    simulate_pilot_phase, AllocationMode, NoiseGenerator,
};
use gevd_mimo::channel::ChannelSampler;
use gevd_mimo::config::{EstimatorKind, EstimatorSpec, SystemConfig};
use gevd_mimo::covest::{
    analytic_pilot_cov, subtraction_estimator, AllCovAccumulator, PilotCovAccumulator,
};
use gevd_mimo::estimators::{ls_estimate, mmse_fixed_filter, mmse_optimal_filter};
use gevd_mimo::harness::{evaluate_network, nmse, CovarianceSource, Network};
use gevd_mimo::linalg::{hermitian_eig, relative_error, solve_hermitian, CMatrix, HermitianMatrix};
use gevd_mimo::rng::rng_from;
use num_complex::Complex64;
use rand::Rng;

use common::*;

fn outer_sum(acc: &mut CMatrix, a: &gevd_mimo::linalg::CVector, b: &gevd_mimo::linalg::CVector) {
    *acc += a * b.adjoint();
}

#[test]
fn channel_samples_match_covariance_and_are_uncorrelated() {
    let links = scattering_links(8, 1, 2, 0.2, 1.0);
    let sampler = ChannelSampler::new(&links).unwrap();
    let draws = 100_000;
    let mut rng = rng_from(11, &[]);
    let mut own = CMatrix::zeros(8, 8);
    let mut cross = CMatrix::zeros(8, 8);
    for t in 0..draws {
        let ch = sampler.sample(t, &mut rng);
        outer_sum(&mut own, &ch.h[0], &ch.h[0]);
        outer_sum(&mut cross, &ch.h[0], &ch.h[1]);
    }
    let scale = Complex64::new(1.0 / draws as f64, 0.0);
    let r0 = links.get(0, 0);
    let r1 = links.get(0, 1);
    assert!(relative_error(&(own * scale), r0.as_matrix()) <= 0.05);
    assert!((cross * scale).norm() <= 0.05 * (r0.trace() * r1.trace()).sqrt());
}

#[test]
fn random_pilots_collide_with_probability_one_over_tau_p() {
    let (blocks, tau_p) = (100_000, 4);
    let alloc = allocate_pilots(blocks, 2, 2, tau_p, AllocationMode::Random, 12);
    let hits = (0..blocks)
        .filter(|&t| alloc.index(t, 0, 1) == alloc.index(t, 1, 1))
        .count();
    let rate = hits as f64 / blocks as f64;
    assert!(
        (rate - 1.0 / tau_p as f64).abs() <= 0.01,
        "collision rate {rate}"
    );
}

#[test]
fn mmse_fixed_matches_empirical_regression() {
    // brute-force LMMSE: W = E{y yᴴ}⁻¹ E{y hᴴ} from simulated despread pilots
    let (n, cells, ues, tau_p) = (8, 2, 3, 2);
    let links = scattering_links(n, cells, ues, 0.25, 0.4);
    let powers: Vec<f64> = (0..cells * ues).map(|i| 0.6 + 0.2 * i as f64).collect();
    let r_nn = make_noise_covariance(n, 0.5, None);
    let alloc = allocate_pilots(1, cells, ues, tau_p, AllocationMode::FixedCyclic, 0);
    let pilots = alloc.row(0).to_vec();
    let book = make_pilot_book(tau_p);
    let sampler = ChannelSampler::new(&links).unwrap();
    let noise = NoiseGenerator::new(&r_nn).unwrap();
    let mut rng = rng_from(13, &[]);
    let (mut ryy, mut ryh) = (CMatrix::zeros(n, n), CMatrix::zeros(n, n));
    for t in 0..100_000 {
        let ch = sampler.sample(t, &mut rng);
        let y = despread(
            &simulate_pilot_phase(&ch, &pilots, &book, &powers, &noise, &mut rng),
            &book,
            pilots[0],
        );
        outer_sum(&mut ryy, &y, &y);
        outer_sum(&mut ryh, &y, &ch.h[0]);
    }
    let empirical = solve_hermitian(&HermitianMatrix::symmetrize(ryy).unwrap(), &ryh).unwrap();
    let filter = mmse_fixed_filter(&links, &powers, &pilots, &r_nn, tau_p, 0).unwrap();
    let err = relative_error(&empirical, &filter.w);
    assert!(err <= 0.02, "relative error {err}");
}

#[test]
fn mmse_filter_beats_ls_and_perturbed_filters() {
    let (n, ues, tau_p, blocks) = (12, 3, 3, 10_000);
    let links = scattering_links(n, 1, ues, 0.2, 1.0);
    let powers = vec![1.0; ues];
    let r_nn = make_noise_covariance(n, 0.3, None);
    let pilot_cov = analytic_pilot_cov(&links, &powers, tau_p, &r_nn, 0);
    let r = links.get(0, 0);
    let optimal = mmse_optimal_filter(&pilot_cov, r, 1.0, 0).unwrap();
    let mut rng = rng_from(14, &[]);
    let perturbations = [
        optimal.w.clone() * Complex64::new(1.1, 0.0),
        optimal.w.clone() * Complex64::new(0.9, 0.0),
        &optimal.w + random_matrix(&mut rng, n, n) * Complex64::new(0.02, 0.0),
    ];
    let alloc = allocate_pilots(blocks, 1, ues, tau_p, AllocationMode::Random, 14);
    let book = make_pilot_book(tau_p);
    let sampler = ChannelSampler::new(&links).unwrap();
    let noise = NoiseGenerator::new(&r_nn).unwrap();
    let mut totals = [0.0; 5];
    for t in 0..blocks {
        let ch = sampler.sample(t, &mut rng);
        let rx = simulate_pilot_phase(&ch, alloc.row(t), &book, &powers, &noise, &mut rng);
        let y = despread(&rx, &book, alloc.index(t, 0, 0));
        let h = &ch.h[0];
        totals[0] += nmse(h, &optimal.estimate(&y), r).unwrap();
        totals[1] += nmse(h, &ls_estimate(&y, 1.0, tau_p).h_hat, r).unwrap();
        for (i, w) in perturbations.iter().enumerate() {
            totals[2 + i] += nmse(h, &w.ad_mul(&y), r).unwrap();
        }
    }
    assert!(
        totals[1..].iter().all(|&other| totals[0] <= other),
        "{totals:?}"
    );
}

#[test]
fn subtraction_estimate_goes_indefinite_with_few_blocks() {
    let (n, cells, ues, tau_p, tau_u, blocks) = (16, 2, 3, 10, 40, 50);
    let links = scattering_links(n, cells, ues, 0.17, 0.3);
    let powers = vec![1.0; cells * ues];
    let sampler = ChannelSampler::new(&links).unwrap();
    let noise = NoiseGenerator::new(&make_noise_covariance(n, 1.0, None)).unwrap();
    let book = make_pilot_book(tau_p);
    let mut indefinite = 0;
    for trial in 0..20u64 {
        let alloc = allocate_pilots(blocks, cells, ues, tau_p, AllocationMode::Random, trial);
        let mut pilot_acc = PilotCovAccumulator::new(n, tau_p);
        let mut all_acc = AllCovAccumulator::new(n);
        for t in 0..blocks {
            let mut rng = rng_from(trial, &[t as u64]);
            let blk = simulate_block(
                &sampler.sample(t, &mut rng),
                alloc.row(t),
                &book,
                tau_u,
                &powers,
                &noise,
                &mut rng,
            );
            pilot_acc.add(&despread(&blk.pilot_rx, &book, alloc.index(t, 0, 0)));
            all_acc.add(&blk);
        }
        let est = subtraction_estimator(
            &pilot_acc.finish(0, 0, 0.0).matrix,
            &all_acc.finish(0).matrix,
            tau_p,
            1.0,
        )
        .unwrap();
        if *hermitian_eig(&est).unwrap().eigenvalues.last().unwrap() < 0.0 {
            indefinite += 1;
        }
    }
    assert!(indefinite >= 1);
}

#[test]
fn approximate_mmse_matches_optimal_on_exact_statistics() {
    let (n, ues, true_rank) = (16, 3, 3);
    let mut rng = rng_from(15, &[]);
    let mats = (0..ues)
        .map(|_| random_low_rank(&mut rng, n, true_rank))
        .collect();
    let links = gevd_mimo::channel::LinkCovariances::from_matrices(0, ues, mats);
    let sys = SystemConfig {
        num_cells: 1,
        ues_per_cell: ues,
        antennas: n,
        tau_p: 4,
        blocks: 10,
        eval_blocks: 2000,
        noise_power: 0.5,
        ..SystemConfig::default()
    };
    let net = Network {
        powers: (0..ues).map(|_| rng.random_range(0.5..2.0)).collect(),
        links,
        r_nn: make_noise_covariance(n, sys.noise_power, None),
    };
    let estimators = vec![
        EstimatorSpec::new(EstimatorKind::MmseRandom),
        EstimatorSpec::ranked(EstimatorKind::Gevd, true_rank),
        EstimatorSpec::ranked(EstimatorKind::Gevd, true_rank + 2),
        EstimatorSpec::new(EstimatorKind::Subt),
    ];
    let outcome =
        evaluate_network(&sys, &estimators, &net, 15, CovarianceSource::Analytic).unwrap();
    let reference = outcome.stats[0].nmse;
    for s in &outcome.stats[1..] {
        assert!(
            (s.nmse - reference).abs() <= 0.02 * reference,
            "{} {} vs {}",
            s.spec.label(),
            s.nmse,
            reference
        );
    }
}
