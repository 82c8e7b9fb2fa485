//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line and
//! the process exits non-zero if any of them fails.

use std::process::ExitCode;
use std::time::Instant;

use elphi::divergence::{center_phi, statistic_from_gammas, PhiFamily};
use elphi::el::{loglik_from_solution, solve_multiplier, ScoreMatrix, SolverConfig};
use elphi::inference::{chi2_quantile, Approximation};
use elphi::model::{
    generate_sample, marginal_event_rate, score_jacobian, score_sum, BetaVector, Dataset,
    SimulationModel,
};
use elphi::power::{power_approx, sample_size, AlternativeSpec, PowerConfig};
use elphi::rng::{derive_seed, SampleStream};
use elphi::sim::{dale_interval, replicate_statistics, run_grid, SimulationConfig};

const MASTER_SEED: u64 = 12345;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn models() -> [SimulationModel; 4] {
    SimulationModel::reference_models()
}

/// Acceptance rate of one grid cell with 1000 replications.
fn cell(model: usize, n: usize, a: f64, level: f64, approx: Approximation) -> f64 {
    let cfg = SimulationConfig {
        models: vec![models()[model]],
        sample_sizes: vec![n],
        a_values: vec![a],
        levels: vec![level],
        approximations: vec![approx],
        replications: 1000,
        master_seed: MASTER_SEED,
        ..Default::default()
    };
    run_grid(&cfg, None).expect("grid runs").cells[0].acceptance
}

fn spot_cells(cells: &[(usize, usize, f64, f64, Approximation, f64)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(m, n, a, level, approx, target) in cells {
        let got = cell(m, n, a, level, approx);
        let ok = (got - target).abs() <= 0.03;
        pass &= ok;
        parts.push(format!(
            "model {} n={n} a={a} {approx}: {got:.3} vs {target} [{}]",
            m + 1,
            if ok { "ok" } else { "off" }
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn marginal_rates() -> Outcome {
    let start = Instant::now();
    let rates: Vec<f64> = models().iter().map(|m| marginal_event_rate(m, 40)).collect();
    let elapsed = start.elapsed();
    let targets = [0.5, 0.4, 0.3, 0.2];
    let close = rates.iter().zip(targets).all(|(r, t)| (r - t).abs() <= 0.005);
    let shown: Vec<String> = rates.iter().map(|r| format!("{r:.4}")).collect();
    Outcome::new(
        close && elapsed.as_secs_f64() < 1.0,
        format!("rates [{}] in {elapsed:?}", shown.join(", ")),
    )
}

fn table_two() -> Outcome {
    spot_cells(&[
        (0, 200, 1.0, 0.90, Approximation::Chi2, 0.871),
        (2, 100, 0.0, 0.90, Approximation::FOwen, 0.859),
        (3, 50, 3.0, 0.90, Approximation::Chi2, 0.740),
    ])
}

fn table_three() -> Outcome {
    spot_cells(&[
        (1, 200, 0.0, 0.95, Approximation::FOwen, 0.944),
        (0, 100, 0.67, 0.95, Approximation::Chi2, 0.929),
    ])
}

fn dale() -> Outcome {
    let cases = [(0.1, "0.073", "0.136"), (0.05, "0.036", "0.070")];
    let mut pass = true;
    let mut parts = Vec::new();
    for (alpha, lo_t, hi_t) in cases {
        let (lo, hi) = dale_interval(alpha, 0.35);
        let (lo_s, hi_s) = (format!("{lo:.3}"), format!("{hi:.3}"));
        let ok = lo_s == lo_t && hi_s == hi_t;
        pass &= ok;
        parts.push(format!("alpha={alpha}: ({lo:.6}, {hi:.6}) -> ({lo_s}, {hi_s}) vs ({lo_t}, {hi_t})"));
    }
    Outcome::new(pass, parts.join("; "))
}

struct Fixture {
    gammas: Vec<f64>,
    loglik: f64,
}

/// Random feasible problems: datasets from the reference models evaluated at a
/// perturbed coefficient vector.
fn fixtures(count: usize) -> Vec<Fixture> {
    let mut out = Vec::with_capacity(count);
    let mut stream = SampleStream::new(derive_seed(MASTER_SEED, &[5]));
    let mut k = 0_u64;
    while out.len() < count {
        k += 1;
        let m = models()[(k % 4) as usize];
        let n = 30 + (stream.uniform() * 170.0) as usize;
        let Ok(ds) = generate_sample(&m, n, derive_seed(MASTER_SEED, &[6, k])) else { continue };
        let beta = BetaVector::new(vec![
            m.beta0 + 0.6 * (stream.uniform() - 0.5),
            m.beta1 + 1.2 * (stream.uniform() - 0.5),
        ])
        .unwrap();
        let Ok(g) = ScoreMatrix::from_dataset(&ds, &beta) else { continue };
        let Ok(sol) = solve_multiplier(&g, &SolverConfig::default()) else { continue };
        let gammas = g.gammas(&sol.t);
        let loglik = loglik_from_solution(&g, &sol);
        out.push(Fixture { gammas, loglik });
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn likelihood_ratio_identity(fx: &[Fixture]) -> Outcome {
    let phi = PhiFamily::power(0.0);
    let worst = fx
        .iter()
        .map(|f| rel_err(statistic_from_gammas(&f.gammas, &phi), -2.0 * f.loglik))
        .fold(0.0, f64::max);
    Outcome::new(worst <= 1e-8, format!("{} fixtures, worst relative error {worst:.2e}", fx.len()))
}

fn shift_invariance(fx: &[Fixture]) -> Outcome {
    let mut worst = 0.0_f64;
    for (i, f) in fx.iter().enumerate() {
        for a in [-1.0, 0.5, 2.0] {
            let c = 0.25 + (i % 7) as f64 * 0.5;
            let shifted = PhiFamily::power(a).with_linear_term(c);
            let t = statistic_from_gammas(&f.gammas, &shifted);
            let t0 = statistic_from_gammas(&f.gammas, &center_phi(&shifted));
            worst = worst.max((t - t0).abs() / t0.abs().max(1.0));
        }
    }
    Outcome::new(worst <= 1e-10, format!("worst discrepancy {worst:.2e}"))
}

fn chi2_two_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-0.5 * x).exp_m1()
    }
}

fn kolmogorov_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.total_cmp(b));
    let m = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max)
}

fn null_distribution() -> Outcome {
    let m = models()[0];
    let a_values = [0.0, 1.0];
    let stats = replicate_statistics(
        &m,
        &m.beta(),
        800,
        &a_values,
        2000,
        derive_seed(MASTER_SEED, &[7]),
        &SolverConfig::default(),
    );
    let ok: Vec<&Vec<f64>> = stats.iter().flatten().collect();
    let mut pass = ok.len() == stats.len();
    let mut parts = vec![format!("{} of {} solved", ok.len(), stats.len())];
    for (ai, a) in a_values.iter().enumerate() {
        let ks = kolmogorov_distance(ok.iter().map(|v| v[ai]).collect(), chi2_two_cdf);
        pass &= ks <= 0.04;
        parts.push(format!("a={a}: KS {ks:.4}"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solver_contract() -> Outcome {
    let mut stream = SampleStream::new(derive_seed(MASTER_SEED, &[8]));
    let mut worst_residual = 0.0_f64;
    let mut worst_system = 0.0_f64;
    let mut worst_score = 0.0_f64;
    let mut instances = 0;
    let mut k = 0_u64;
    while instances < 100 {
        k += 1;
        let m = models()[(k % 4) as usize];
        let n = 30 + (stream.uniform() * 270.0) as usize;
        let Ok(ds) = generate_sample(&m, n, derive_seed(MASTER_SEED, &[9, k])) else { continue };
        let beta = BetaVector::new(vec![
            m.beta0 + 0.6 * (stream.uniform() - 0.5),
            m.beta1 + 1.2 * (stream.uniform() - 0.5),
        ])
        .unwrap();
        let Ok(g) = ScoreMatrix::from_dataset(&ds, &beta) else { continue };
        let Ok(sol) = solve_multiplier(&g, &SolverConfig::default()) else { continue };
        instances += 1;
        worst_residual = worst_residual.max(sol.residual_norm).max(max_abs(g.system(&sol.t)));

        // Halfway to the root keeps every denominator well inside the domain.
        let t: Vec<f64> = sol.t.iter().map(|v| 0.5 * v).collect();
        worst_system = worst_system.max(jacobian_error(&g.system_jacobian(&t), &t, |p| g.system(p)));

        let b = beta.as_slice().to_vec();
        let analytic = score_jacobian(&ds, &beta).unwrap();
        worst_score = worst_score.max(jacobian_error(&analytic, &b, |p| score_at(&ds, p)));
    }
    Outcome::new(
        worst_residual <= 1e-10 && worst_system <= 1e-6 && worst_score <= 1e-6,
        format!(
            "{instances} instances: residual {worst_residual:.2e}, system Jacobian {worst_system:.2e}, score Jacobian {worst_score:.2e}"
        ),
    )
}

fn score_at(ds: &Dataset, b: &[f64]) -> Vec<f64> {
    score_sum(ds, &BetaVector::new(b.to_vec()).unwrap()).unwrap()
}

/// Largest entrywise gap between `analytic` and a central-difference Jacobian
/// of `f` at `x`, relative to the largest analytic entry.
fn jacobian_error(
    analytic: &nalgebra::DMatrix<f64>,
    x: &[f64],
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let scale = max_abs(analytic.iter().copied()).max(1e-300);
    let mut worst = 0.0_f64;
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1e-2);
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[j] += h;
        down[j] -= h;
        let (fu, fd) = (f(&up), f(&down));
        for i in 0..fu.len() {
            let numeric = (fu[i] - fd[i]) / (2.0 * h);
            worst = worst.max((numeric - analytic[(i, j)]).abs() / scale);
        }
    }
    worst
}

fn consistency() -> Outcome {
    let null = BetaVector::new(vec![0.0, 4.36]).unwrap();
    let alt = SimulationModel::new(0.3, 4.36, 0.5).unwrap();
    let a_values = [0.0, 1.0];
    let sizes = [100_usize, 400, 1600];
    let runs: Vec<Vec<Vec<f64>>> = sizes
        .iter()
        .map(|&n| {
            replicate_statistics(
                &alt,
                &null,
                n,
                &a_values,
                1000,
                derive_seed(MASTER_SEED, &[n as u64]),
                &SolverConfig::default(),
            )
            .into_iter()
            .flatten()
            .collect()
        })
        .collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for level in [0.90, 0.95] {
        let crit = chi2_quantile(2, level).unwrap();
        for (ai, a) in a_values.iter().enumerate() {
            let rates: Vec<f64> = runs
                .iter()
                .map(|s| s.iter().filter(|v| v[ai] > crit).count() as f64 / s.len() as f64)
                .collect();
            let ok = rates.windows(2).all(|w| w[0] < w[1]) && rates[2] > 0.9;
            pass &= ok;
            let shown: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
            parts.push(format!("level {level} a={a}: [{}]{}", shown.join(", "), if ok { "" } else { " off" }));
        }
    }
    Outcome::new(pass, parts.join("; "))
}

fn sample_size_round_trip() -> Outcome {
    let spec = |b0: [f64; 2], bs: [f64; 2]| {
        AlternativeSpec::new(BetaVector::new(b0.to_vec()).unwrap(), BetaVector::new(bs.to_vec()).unwrap())
            .unwrap()
    };
    let fixtures = [
        (spec([0.0, 4.36], [0.3, 4.36]), 0.0, 0.95, 0.8),
        (spec([-1.16, 4.2], [-0.9, 4.2]), 1.0, 0.90, 0.9),
        (spec([0.0, 4.36], [0.0, 4.16]), -0.5, 0.95, 0.7),
    ];
    let cfg = PowerConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (s, a, level, target) in &fixtures {
        let phi = PhiFamily::power(*a);
        let report = sample_size(s, *level, *target, &phi, &cfg).unwrap();
        let achieved = power_approx(s, report.n_star, *level, &phi, &cfg).unwrap().power;
        let ok = achieved >= target - 1e-9;

        let half = sample_size(s, *level, 0.5, &phi, &cfg).unwrap();
        let closed = chi2_quantile(2, *level).unwrap() * phi.d2phi(1.0) / (2.0 * half.d_phi);
        let half_ok = rel_err(half.n_real, closed) <= 1e-9;
        pass &= ok && half_ok;
        parts.push(format!(
            "n*={} power {achieved:.4} >= {target}; half-power n {:.4} vs {closed:.4}",
            report.n_star, half.n_real
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

type Criterion<'a> = (usize, &'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let start = Instant::now();
    let fx = fixtures(100);
    let criteria: Vec<Criterion> = vec![
        (1, "marginal event rates", Box::new(marginal_rates)),
        (2, "null acceptance spot cells, level 0.90", Box::new(table_two)),
        (3, "null acceptance spot cells, level 0.95", Box::new(table_three)),
        (4, "Dale intervals", Box::new(dale)),
        (5, "likelihood ratio identity", Box::new(|| likelihood_ratio_identity(&fx))),
        (6, "linear shift invariance", Box::new(|| shift_invariance(&fx))),
        (7, "null distribution near chi-square", Box::new(null_distribution)),
        (8, "solver contract and Jacobians", Box::new(solver_contract)),
        (9, "consistency under a fixed alternative", Box::new(consistency)),
        (10, "sample size round trip", Box::new(sample_size_round_trip)),
    ];
    let mut failed = 0;
    for (id, name, run) in &criteria {
        let t = Instant::now();
        let out = run();
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2}: {} {name} ({:.1}s): {}",
            if out.pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
