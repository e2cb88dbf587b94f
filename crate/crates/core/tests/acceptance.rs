//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Failures are reported without failing the test run unless
//! `ACCEPTANCE_STRICT` is set, in which case any failure exits non-zero.
//! Positional arguments select criteria by number.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_irt::simulation::{GuessType, Mechanism};
use robust_irt::{
    enumerate_patterns, fit, generate, influence_table, psi, psi_jacobian, run_study,
    simulate_clean, true_difficulties, FitConfig, Hyperparameter, ItemBank, ModelIntegrals,
    QuadratureGrid, ResponsePattern, ScenarioSpec,
};

const D: f64 = 1.702;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn pat(bits: &[u8]) -> ResponsePattern {
    ResponsePattern::new(bits.to_vec()).unwrap()
}

fn hypers(alphas: &[f64]) -> Vec<Hyperparameter> {
    alphas
        .iter()
        .flat_map(|&a| {
            [
                Hyperparameter::dpd(a).unwrap(),
                Hyperparameter::gamma(a).unwrap(),
            ]
        })
        .collect()
}

/// Reference percentages for b = (-2, -1, 0, 1, 2).
const REFERENCE_PROB: [([u8; 5], f64); 32] = [
    ([1, 1, 0, 0, 0], 23.637),
    ([1, 1, 1, 0, 0], 23.637),
    ([1, 0, 0, 0, 0], 13.059),
    ([1, 1, 1, 1, 0], 13.059),
    ([1, 0, 1, 0, 0], 4.309),
    ([1, 1, 0, 1, 0], 4.309),
    ([0, 0, 0, 0, 0], 4.170),
    ([1, 1, 1, 1, 1], 4.170),
    ([0, 1, 0, 0, 0], 2.381),
    ([1, 1, 1, 0, 1], 2.381),
    ([1, 0, 0, 1, 0], 0.786),
    ([1, 0, 1, 1, 0], 0.786),
    ([0, 1, 1, 0, 0], 0.786),
    ([1, 1, 0, 0, 1], 0.786),
    ([0, 0, 1, 0, 0], 0.434),
    ([1, 1, 0, 1, 1], 0.434),
    ([0, 1, 0, 1, 0], 0.143),
    ([1, 0, 1, 0, 1], 0.143),
    ([0, 1, 1, 1, 0], 0.143),
    ([1, 0, 0, 0, 1], 0.143),
    ([0, 0, 0, 1, 0], 0.079),
    ([1, 0, 1, 1, 1], 0.079),
    ([0, 0, 1, 1, 0], 0.026),
    ([1, 0, 0, 1, 1], 0.026),
    ([0, 1, 1, 0, 1], 0.026),
    ([0, 1, 0, 0, 1], 0.026),
    ([0, 0, 0, 0, 1], 0.014),
    ([0, 1, 1, 1, 1], 0.014),
    ([0, 0, 1, 0, 1], 0.005),
    ([0, 1, 0, 1, 1], 0.005),
    ([0, 0, 0, 1, 1], 0.001),
    ([0, 0, 1, 1, 1], 0.001),
];

fn pattern_probabilities() -> Verdict {
    let bank = ItemBank::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
    let grid = QuadratureGrid::gauss_hermite(21).unwrap();
    let mut worst = 0.0f64;
    for (bits, pct) in REFERENCE_PROB {
        let p = 100.0 * bank.marginal_pattern_prob(&pat(&bits), &grid);
        worst = worst.max((p - pct).abs());
    }
    verdict(
        worst <= 5e-4,
        format!("max |Δ| = {worst:.2e} percentage points over 32 patterns"),
    )
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn contamination_counts() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for (prev, sev) in [(0.1, 0.3), (0.1, 0.5), (0.3, 0.3), (0.3, 0.5)] {
        let spec = ScenarioSpec::uniform_guess(GuessType::Unbiased, prev, sev, 1000, 15);
        let (mut g, mut c) = (Vec::new(), Vec::new());
        for seed in 0..200 {
            let d = generate(&spec, seed).unwrap();
            g.push(d.guessers() as f64);
            c.push(d.guessed_cells() as f64);
        }
        let (gm, gse) = mean_se(&g);
        let (cm, cse) = mean_se(&c);
        let (eg, ec) = (1000.0 * prev, 1000.0 * prev * 15.0 * sev);
        let pass = (gm - eg).abs() <= 3.0 * gse && (cm - ec).abs() <= 3.0 * cse;
        ok &= pass;
        notes.push(format!("({prev},{sev}) {gm:.1}/{cm:.1} vs {eg}/{ec}"));
    }
    for (mech, target) in [(Mechanism::R1, 1273.0), (Mechanism::R2, 1457.0)] {
        let spec = ScenarioSpec::ability_dependent(GuessType::Unbiased, mech, 1000, 15);
        let cells: Vec<f64> = (0..200)
            .map(|seed| generate(&spec, seed).unwrap().guessed_cells() as f64)
            .collect();
        let (m, _) = mean_se(&cells);
        let pass = (m / target - 1.0).abs() <= 0.05;
        ok &= pass;
        notes.push(format!("{mech} {m:.0} vs {target}"));
    }
    verdict(ok, notes.join("; "))
}

fn random_bank(rng: &mut ChaCha8Rng, items: usize) -> ItemBank<f64> {
    ItemBank::new((0..items).map(|_| rng.random_range(-2.5..2.5)).collect()).unwrap()
}

fn mm_monotonicity() -> Verdict {
    let mut violations = 0;
    let mut worst_rise = 0.0f64;
    let mut worst_psi = 0.0f64;
    let mut unconverged = 0;
    let mut fits = 0;
    for d in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + d);
        let bank = random_bank(&mut rng, 15);
        let data = simulate_clean(&bank, 500, &mut rng).unwrap();
        for h in hypers(&[0.1, 0.3, 0.5]) {
            let r = fit(&data, &FitConfig::new(h)).unwrap();
            fits += 1;
            for w in r.objective_trace.windows(2) {
                let rise = w[1] - w[0];
                worst_rise = worst_rise.max(rise);
                if rise > 1e-10 {
                    violations += 1;
                }
            }
            if r.converged {
                worst_psi = worst_psi.max(r.stationarity_norm);
            } else {
                unconverged += 1;
            }
        }
    }
    verdict(
        violations == 0 && worst_psi < 1e-5 && unconverged == 0,
        format!(
            "{fits} fits: {violations} objective increases above 1e-10 (largest {worst_rise:.2e}); \
             max ‖Ψ‖ at convergence {worst_psi:.2e}; {unconverged} unconverged"
        ),
    )
}

fn alpha_limit() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let bank = true_difficulties::<f64>(15).unwrap();
        let data = simulate_clean(&bank, 500, &mut ChaCha8Rng::seed_from_u64(500 + seed)).unwrap();
        let base = fit(&data, &FitConfig::new(Hyperparameter::mmle())).unwrap();
        for h in hypers(&[1e-3]) {
            let r = fit(&data, &FitConfig::new(h)).unwrap();
            let linf = r
                .difficulties
                .iter()
                .zip(&base.difficulties)
                .map(|(a, b): (&f64, &f64)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(linf);
        }
    }
    verdict(
        worst < 0.01,
        format!("max L∞ gap to MMLE over 20 datasets = {worst:.2e}"),
    )
}

fn icc(b: f64, theta: f64) -> f64 {
    1.0 / (1.0 + (-D * (theta - b)).exp())
}

/// Brute-force `C`, `E`, `M2` over all patterns and nodes.
fn enumerate_integrals(
    b: &[f64],
    grid: &QuadratureGrid<f64>,
    alpha: f64,
) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let j = b.len();
    let (mut c, mut e, mut m2) = (0.0, vec![0.0; j], vec![vec![0.0; j]; j]);
    for u in enumerate_patterns(j).unwrap() {
        for (&t, &w) in grid.nodes().iter().zip(grid.weights()) {
            let p: Vec<f64> = b.iter().map(|&bj| icc(bj, t)).collect();
            let q: f64 = (0..j)
                .map(|m| if u.bits()[m] == 1 { p[m] } else { 1.0 - p[m] })
                .product();
            let qa = w * q.powf(1.0 + alpha);
            let xi: Vec<f64> = (0..j)
                .map(|m| -D * (f64::from(u.bits()[m]) - p[m]))
                .collect();
            c += qa;
            for a in 0..j {
                e[a] += qa * xi[a];
                for (bb, cell) in m2[a].iter_mut().enumerate() {
                    let sigma = if a == bb {
                        -D * D * p[a] * (1.0 - p[a])
                    } else {
                        0.0
                    };
                    *cell += qa * ((1.0 + alpha) * xi[a] * xi[bb] + sigma);
                }
            }
        }
    }
    (c, e, m2)
}

fn derivative_validation() -> Verdict {
    let grid = QuadratureGrid::gauss_hermite(21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst_fd = 0.0f64;
    for _ in 0..50 {
        let j = rng.random_range(2..=6);
        let b: Vec<f64> = (0..j).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = pat(&(0..j)
            .map(|_| rng.random_range(0..=1u8))
            .collect::<Vec<_>>());
        let alpha = rng.random_range(0.05..1.0);
        for h in [
            Hyperparameter::mmle(),
            Hyperparameter::dpd(alpha).unwrap(),
            Hyperparameter::gamma(alpha).unwrap(),
        ] {
            let bank = ItemBank::new(b.clone()).unwrap();
            let jac = psi_jacobian(h, &bank, &u, &grid).unwrap();
            let scale = (0..j * j)
                .map(|i| jac[(i / j, i % j)].abs())
                .fold(1.0, f64::max);
            for col in 0..j {
                let step = 1e-5;
                let shifted = |s: f64| {
                    let mut bb = b.clone();
                    bb[col] += s;
                    psi(h, &ItemBank::new(bb).unwrap(), &u, &grid).unwrap()
                };
                let (up, dn) = (shifted(step), shifted(-step));
                for row in 0..j {
                    let fd = (up[row] - dn[row]) / (2.0 * step);
                    worst_fd = worst_fd.max((fd - jac[(row, col)]).abs() / scale);
                }
            }
        }
    }
    let mut worst_int = 0.0f64;
    for j in 1..=8 {
        let b: Vec<f64> = (0..j).map(|_| rng.random_range(-2.0..2.0)).collect();
        for alpha in [0.1, 0.3, 0.5, 1.0] {
            let (c, e, m2) = enumerate_integrals(&b, &grid, alpha);
            let mi = ModelIntegrals::new(&ItemBank::new(b.clone()).unwrap(), &grid, alpha);
            worst_int = worst_int.max((mi.c - c).abs());
            for a in 0..j {
                worst_int = worst_int.max((mi.e[a] - e[a]).abs());
                for (bb, &v) in m2[a].iter().enumerate() {
                    worst_int = worst_int.max((mi.m2[(a, bb)] - v).abs());
                }
            }
        }
    }
    verdict(
        worst_fd < 1e-4 && worst_int < 1e-10,
        format!("Jacobian vs FD max rel err {worst_fd:.2e}; integrals vs enumeration max err {worst_int:.2e}"),
    )
}

fn fisher_consistency() -> Verdict {
    let bank = true_difficulties::<f64>(5).unwrap();
    let grid = QuadratureGrid::gauss_hermite(21).unwrap();
    let patterns = enumerate_patterns(5).unwrap();
    let mut worst = 0.0f64;
    let mut methods = vec![Hyperparameter::mmle()];
    methods.extend(hypers(&[0.1, 0.3, 0.5]));
    for h in methods {
        let mut total = [0.0; 5];
        for u in &patterns {
            let q = bank.marginal_pattern_prob(u, &grid);
            for (t, p) in total.iter_mut().zip(psi(h, &bank, u, &grid).unwrap()) {
                *t += q * p;
            }
        }
        worst = worst.max(total.iter().fold(0.0, |m, t| m.max(t.abs())));
    }
    verdict(
        worst < 1e-8,
        format!("max |Σ q ψ| over 7 methods = {worst:.2e}"),
    )
}

fn configs(labels: &[&str]) -> Vec<FitConfig<f64>> {
    labels
        .iter()
        .map(|l| FitConfig::new(l.parse().unwrap()))
        .collect()
}

fn rmse_of(report: &robust_irt::StudyReport<f64>, label: &str) -> (f64, f64) {
    let m = report.methods.iter().find(|m| m.method == label).unwrap();
    (m.metrics.rmse, m.metrics.bias)
}

fn clean_rmse() -> Verdict {
    let spec = ScenarioSpec::clean(500, 15);
    let r = run_study(
        &spec,
        &configs(&["mmle", "dpd:0.1", "gamma:0.1"]),
        100,
        4,
        None,
    )
    .unwrap();
    let (mmle, _) = rmse_of(&r, "mmle");
    let (dpd, _) = rmse_of(&r, "dpd:0.1");
    let (gam, _) = rmse_of(&r, "gamma:0.1");
    let pass = (mmle - 0.082).abs() <= 0.015
        && (dpd - 0.083).abs() <= 0.015
        && (gam - 0.083).abs() <= 0.015;
    verdict(
        pass,
        format!(
            "RMSE mmle {mmle:.4} (0.082), dpd:0.1 {dpd:.4} (0.083), gamma:0.1 {gam:.4} (0.083)"
        ),
    )
}

fn unbiased_ordering() -> Verdict {
    let spec = ScenarioSpec::uniform_guess(GuessType::Unbiased, 0.1, 0.3, 500, 15);
    let r = run_study(&spec, &configs(&["mmle", "dpd:0.3"]), 100, 2, None).unwrap();
    let (mmle, _) = rmse_of(&r, "mmle");
    let (dpd, _) = rmse_of(&r, "dpd:0.3");
    let gap_needed = 0.5 * (0.125 - 0.097);
    let pass =
        mmle - dpd >= gap_needed && (mmle - 0.125).abs() <= 0.02 && (dpd - 0.097).abs() <= 0.02;
    verdict(
        pass,
        format!(
            "RMSE mmle {mmle:.4} (0.125), dpd:0.3 {dpd:.4} (0.097); gap {:.4} ≥ {gap_needed:.3}",
            mmle - dpd
        ),
    )
}

fn biased_accuracy() -> Verdict {
    let spec = ScenarioSpec::uniform_guess(GuessType::Biased, 0.3, 0.5, 1000, 15);
    let r = run_study(&spec, &configs(&["mmle", "dpd:0.5"]), 100, 3, None).unwrap();
    let (mmle, mb) = rmse_of(&r, "mmle");
    let (dpd, db) = rmse_of(&r, "dpd:0.5");
    let mmle_bias: Vec<_> = r
        .records_for("mmle")
        .map(|x| (x.replication, x.bias))
        .collect();
    let wins = r
        .records_for("dpd:0.5")
        .filter(|x| {
            mmle_bias
                .iter()
                .find(|(rep, _)| *rep == x.replication)
                .is_some_and(|(_, b)| x.bias.abs() < b.abs())
        })
        .count();
    let pass = (mmle - 0.426).abs() <= 0.04 && (dpd - 0.148).abs() <= 0.03 && wins >= 95;
    verdict(
        pass,
        format!(
            "RMSE mmle {mmle:.4} (0.426), dpd:0.5 {dpd:.4} (0.148); bias {mb:.4} vs {db:.4}; robust bias lower in {wins}/100"
        ),
    )
}

fn influence_norms() -> Verdict {
    let bank = true_difficulties::<f64>(5).unwrap();
    let labels = [
        "mmle",
        "dpd:0.1",
        "dpd:0.3",
        "dpd:0.5",
        "gamma:0.1",
        "gamma:0.3",
        "gamma:0.5",
    ];
    let r = influence_table(&bank, 2000, &configs(&labels), 50, 6, None).unwrap();
    let ges = |l: &str| {
        r.methods
            .iter()
            .find(|m| m.method == l)
            .unwrap()
            .gross_error_sensitivity
    };
    let mmle_ges = ges("mmle");
    let ges_ok = labels[1..].iter().all(|l| ges(l) < mmle_ges);
    let rare = pat(&[0, 0, 1, 1, 1]);
    let mmle_rare = r.norm("mmle", &rare).unwrap();
    let dpd_rare = r.norm("dpd:0.5", &rare).unwrap();
    let rare_ok = (mmle_rare / 17.198 - 1.0).abs() <= 0.10 && dpd_rare < 2.0;
    let uniform_ok = [pat(&[0; 5]), pat(&[1; 5])].iter().all(|u| {
        let base = r.norm("mmle", u).unwrap();
        labels[1..].iter().all(|l| r.norm(l, u).unwrap() > base)
    });
    verdict(
        ges_ok && rare_ok && uniform_ok && r.failures == 0,
        format!(
            "GES mmle {mmle_ges:.3} vs robust max {:.3}; (0,0,1,1,1) mmle {mmle_rare:.3} (17.198), dpd:0.5 {dpd_rare:.3} (<2); \
             uniform patterns amplified: {uniform_ok}; skipped {}",
            labels[1..].iter().map(|l| ges(l)).fold(0.0, f64::max),
            r.failures
        ),
    )
}

fn sandwich_calibration() -> Verdict {
    let bank = true_difficulties::<f64>(5).unwrap();
    let cfg = FitConfig::new(Hyperparameter::mmle()).with_covariance();
    let fits: Vec<_> = (0..200u64)
        .map(|rep| {
            let mut rng = robust_irt::replication_rng(11, rep);
            let data = simulate_clean(&bank, 5000, &mut rng).unwrap();
            let r = fit(&data, &cfg).unwrap();
            (r.difficulties.clone(), r.standard_errors().unwrap())
        })
        .collect();
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for j in 0..5 {
        let est: Vec<f64> = fits.iter().map(|f| f.0[j]).collect();
        let m = est.iter().sum::<f64>() / est.len() as f64;
        let sd = (est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
        let se = fits.iter().map(|f| f.1[j]).sum::<f64>() / fits.len() as f64;
        worst = worst.max((sd / se - 1.0).abs());
        notes.push(format!("{sd:.4}/{se:.4}"));
    }
    verdict(
        worst <= 0.15,
        format!(
            "sd/SE per item {}; max relative gap {worst:.3}",
            notes.join(" ")
        ),
    )
}

type Criterion = (u32, &'static str, Duration, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 11] = [
        (
            1,
            "analytic pattern probabilities",
            Duration::from_secs(1),
            pattern_probabilities,
        ),
        (
            2,
            "contamination counts",
            Duration::from_secs(30),
            contamination_counts,
        ),
        (
            3,
            "MM monotonicity and stationarity",
            Duration::from_secs(300),
            mm_monotonicity,
        ),
        (
            4,
            "small-alpha limit",
            Duration::from_secs(120),
            alpha_limit,
        ),
        (
            5,
            "Jacobians and factorized integrals",
            Duration::from_secs(120),
            derivative_validation,
        ),
        (
            6,
            "Fisher consistency",
            Duration::from_secs(10),
            fisher_consistency,
        ),
        (7, "clean-data RMSE", Duration::from_secs(900), clean_rmse),
        (
            8,
            "unbiased contamination ordering",
            Duration::from_secs(1200),
            unbiased_ordering,
        ),
        (
            9,
            "biased contamination accuracy",
            Duration::from_secs(1800),
            biased_accuracy,
        ),
        (
            10,
            "influence table",
            Duration::from_secs(900),
            influence_norms,
        ),
        (
            11,
            "sandwich SE calibration",
            Duration::from_secs(1200),
            sandwich_calibration,
        ),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let pass = v.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.2} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
