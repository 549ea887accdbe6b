mod common;

use common::*;
use panelhmm::dataset::{DesignMatrix, ObservationPanel};
use panelhmm::mcmc::updates::{
    draw_mu, draw_sigma, draw_simplex, emission_counts, impute_subject, mu_conditional, rw_metropolis, sample_missing_y,
};
use panelhmm::mcmc::{PriorSpec, SigmaPrior};
use statrs::distribution::{ContinuousCDF, InverseGamma, Normal};

#[test]
fn mu_draws_follow_the_conjugate_normal() {
    let alphas = [0.3, -0.1, 0.8, 0.2, 0.5];
    let sum: f64 = alphas.iter().sum();
    let (mean, sd) = mu_conditional(sum, 5, 0.5, 10.0);
    let dist = Normal::new(mean, sd).unwrap();
    let mut r = rng(1);
    let pit: Vec<f64> = (0..100_000).map(|_| dist.cdf(draw_mu(sum, 5, 0.5, 10.0, &mut r))).collect();
    assert!(ks_uniform(&pit) < 0.02);
}

#[test]
fn sigma_squared_draws_follow_the_inverse_gamma() {
    for (prior, shape) in [(SigmaPrior::FlatSigma, 4.5), (SigmaPrior::FlatVariance, 4.0)] {
        let spec = PriorSpec {
            sigma_prior: prior,
            ..PriorSpec::default()
        };
        let dist = InverseGamma::new(shape, 3.2 / 2.0).unwrap();
        let mut r = rng(2);
        let pit: Vec<f64> = (0..100_000)
            .map(|_| dist.cdf(draw_sigma(3.2, 10, &spec, &mut r).unwrap().powi(2)))
            .collect();
        assert!(ks_uniform(&pit) < 0.02, "{prior:?}");
    }
}

#[test]
fn truncated_sigma_respects_the_bound() {
    let spec = PriorSpec {
        sigma_upper: Some(0.8),
        ..PriorSpec::default()
    };
    let mut r = rng(3);
    assert!((0..10_000).all(|_| draw_sigma(5.0, 6, &spec, &mut r).unwrap() <= 0.8));
}

#[test]
fn truncated_sigma_in_the_far_tail() {
    // (ss, n, bound): mode inside the range, boundary case, far tail, and
    // shape below one.
    for (ss, n, bound) in [(2.0, 7, 2.0), (8.0001, 5, 2.0), (120.0, 5, 2.0), (4.0, 2, 0.5)] {
        let spec = PriorSpec {
            sigma_upper: Some(bound),
            ..PriorSpec::default()
        };
        let ig = InverseGamma::new((n as f64 - 1.0) / 2.0, ss / 2.0).unwrap();
        let mass = ig.cdf(bound * bound);
        let mut r = rng(5);
        let pit: Vec<f64> = (0..50_000)
            .map(|_| ig.cdf(draw_sigma(ss, n, &spec, &mut r).unwrap().powi(2)) / mass)
            .collect();
        assert!(ks_uniform(&pit) < 0.02, "ss {ss} n {n} bound {bound}");
    }
}

#[test]
fn too_few_subjects_for_the_scale_update() {
    assert!(draw_sigma(1.0, 1, &PriorSpec::default(), &mut rng(0)).is_err());
}

#[test]
fn dirichlet_moments() {
    let n = 100_000;
    let mut r = rng(4);
    let counts = [99.0, 1.0, 0.0];
    let a: Vec<f64> = counts.iter().map(|c| c + 1.0).collect();
    let a0: f64 = a.iter().sum();
    let mut mean = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..n {
        let d = draw_simplex(&counts, 1.0, &mut r);
        for j in 0..3 {
            mean[j] += d[j] / n as f64;
            sq[j] += d[j] * d[j] / n as f64;
        }
    }
    for j in 0..3 {
        let m = a[j] / a0;
        let var = m * (1.0 - m) / (a0 + 1.0);
        assert!((mean[j] - m).abs() < 4.0 * (var / n as f64).sqrt() + 1e-12);
        let v = sq[j] - mean[j] * mean[j];
        assert!((v - var).abs() < 0.05 * var, "variance {v} vs {var}");
    }
    assert!((mean[0] - 100.0 / 103.0).abs() < 1e-3);
}

#[test]
fn random_walk_targets_the_toy_density() {
    // Target N(1, 0.5²); every fifth draw kept.
    let target = |x: f64| -(x - 1.0) * (x - 1.0) / (2.0 * 0.25);
    let dist = Normal::new(1.0, 0.5).unwrap();
    let mut r = rng(5);
    let mut x = 0.0;
    let mut pit = Vec::with_capacity(100_000);
    for it in 0..505_000 {
        x = rw_metropolis(x, 1.2, target, &mut r).unwrap().0;
        if it >= 5_000 && it % 5 == 0 {
            pit.push(dist.cdf(x));
        }
    }
    assert!(ks_uniform(&pit) < 0.02);
}

#[test]
fn single_interior_gap_imputation_matches_brute_force() {
    let params = random_markov(6, 3, 1, 1);
    let design = random_design(&mut rng(7), 1, 3, 1);
    let obs = vec![Some(1), None, Some(2)];
    let q0 = naive_row(&params.transitions, 0, 1, design.row(0, 0));
    let exact: Vec<f64> = (0..3)
        .map(|m| q0[m] * naive_row(&params.transitions, 0, m, design.row(0, 1))[2])
        .collect();
    let total: f64 = exact.iter().sum();
    let mut freq = [0.0; 3];
    let mut r = rng(8);
    let n = 100_000;
    for _ in 0..n {
        let z = impute_subject(&params, &design, 0, &obs, &mut r).unwrap();
        assert_eq!((z[0], z[2]), (1, 2));
        freq[z[1]] += 1.0 / n as f64;
    }
    let tv: f64 = (0..3).map(|m| (freq[m] - exact[m] / total).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.01, "total variation {tv}");
}

#[test]
fn leading_and_trailing_gaps_use_the_initial_distribution_and_free_end() {
    let params = random_markov(9, 2, 0, 1);
    let design = DesignMatrix::zeros(1, 4, 0);
    let obs = vec![None, Some(1), Some(0), None];
    let consistent: Vec<Vec<usize>> = all_paths(2, 4)
        .into_iter()
        .filter(|p| p[1] == 1 && p[2] == 0)
        .collect();
    let weights: Vec<f64> = consistent
        .iter()
        .map(|p| naive_markov_path(&params, &design, 0, p))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut freq = vec![0.0; consistent.len()];
    let mut r = rng(10);
    let n = 100_000;
    for _ in 0..n {
        let z = impute_subject(&params, &design, 0, &obs, &mut r).unwrap();
        let at = consistent.iter().position(|p| *p == z).unwrap();
        freq[at] += 1.0 / n as f64;
    }
    let tv: f64 = freq.iter().zip(&weights).map(|(f, w)| (f - w / total).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.01);
}

#[test]
fn complete_panel_is_left_unchanged() {
    let params = random_markov(11, 3, 0, 2);
    let panel = random_panel(&mut rng(12), 2, 6, 3, 0.0);
    let z = sample_missing_y(&params, &panel, &DesignMatrix::zeros(2, 6, 0), &mut rng(13)).unwrap();
    let expect: Vec<usize> = (0..2).flat_map(|i| panel.subject(i)).map(Option::unwrap).collect();
    assert_eq!(z, expect);
}

#[test]
fn emission_counts_skip_missing_cells() {
    let panel = ObservationPanel::from_rows(&[vec![Some(0), None, Some(2)], vec![Some(1), Some(1), None]], 3).unwrap();
    let hidden = [0, 1, 1, 1, 0, 0];
    let counts = emission_counts(&panel, &hidden, 2);
    assert_eq!(counts, vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
}
