//! Monte Carlo coverage experiments for the power-divergence statistics.
//!
//! Replication `j` of the group `(model index, n)` draws its dataset from the
//! stream seeded with `derive_seed(derive_seed(master_seed, [model index, n]), [j])`
//! (model index 0-based). One
//! dataset therefore serves every `a`, level and approximation of its group,
//! and the multiplier is solved once per dataset. Replications whose solve
//! fails are counted and left out of the acceptance denominator.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::divergence::{statistic_from_gammas, PhiFamily};
use crate::el::{solve_multiplier, ScoreMatrix, SolverConfig};
use crate::inference::{critical_value, Approximation, InferenceError};
use crate::model::{generate_sample, sigmoid, BetaVector, SimulationModel};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn default_models() -> Vec<SimulationModel> {
    SimulationModel::reference_models().to_vec()
}

fn default_sample_sizes() -> Vec<usize> {
    vec![50, 100, 200]
}

fn default_a_values() -> Vec<f64> {
    vec![-1.0, -0.5, -0.25, -0.125, 0.0, 0.5, 0.67, 1.0, 1.5, 3.0]
}

fn default_levels() -> Vec<f64> {
    vec![0.90, 0.95]
}

fn default_replications() -> usize {
    1000
}

fn default_approximations() -> Vec<Approximation> {
    vec![Approximation::Chi2, Approximation::FOwen]
}

fn default_dale_d() -> f64 {
    0.35
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_models")]
    pub models: Vec<SimulationModel>,
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_a_values")]
    pub a_values: Vec<f64>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_approximations")]
    pub approximations: Vec<Approximation>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_dale_d")]
    pub dale_d: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            models: default_models(),
            sample_sizes: default_sample_sizes(),
            a_values: default_a_values(),
            levels: default_levels(),
            replications: default_replications(),
            master_seed: 0,
            approximations: default_approximations(),
            solver: SolverConfig::default(),
            dale_d: default_dale_d(),
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return bad(format!("level {l} is outside (0, 1)"));
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 3) {
            return bad(format!("sample size {n} is below 3"));
        }
        if let Some(a) = self.a_values.iter().find(|a| !a.is_finite()) {
            return bad(format!("a value {a} is not finite"));
        }
        for m in &self.models {
            if !(m.beta0.is_finite() && m.beta1.is_finite()) {
                return bad("model coefficients must be finite".into());
            }
            if !(m.marginal_rate > 0.0 && m.marginal_rate < 1.0) {
                return bad(format!("marginal rate {} is outside (0, 1)", m.marginal_rate));
            }
        }
        if !(self.dale_d >= 0.0) {
            return bad("dale_d must be non-negative".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return bad("solver tol must be positive and max_iter at least 1".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    /// 1-based position of the model in the config.
    pub model: usize,
    pub n: usize,
    pub a: f64,
    pub level: f64,
    pub approx: Approximation,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
    /// Accepted over non-failed replications; 0 when every solve failed.
    pub acceptance: f64,
    /// `sqrt(r (1 - r) / N)` with `N` the non-failed count.
    pub stderr: f64,
    pub flagged: bool,
}

impl CellRecord {
    #[allow(clippy::too_many_arguments)]
    fn new(model: usize, n: usize, a: f64, level: f64, approx: Approximation, accepted: usize, rejected: usize, failed: usize) -> Self {
        let effective = accepted + rejected;
        let (acceptance, stderr) = if effective == 0 {
            (0.0, 0.0)
        } else {
            let r = accepted as f64 / effective as f64;
            (r, (r * (1.0 - r) / effective as f64).sqrt())
        };
        Self {
            model,
            n,
            a,
            level,
            approx,
            accepted,
            rejected,
            failed,
            acceptance,
            stderr,
            flagged: false,
        }
    }

    pub fn replications(&self) -> usize {
        self.accepted + self.rejected + self.failed
    }
}

/// Per-replication statistics, one per `a`; `None` when the solve failed.
/// Datasets are drawn from `data_model`, the statistic is evaluated at
/// `beta_null`, and replication `j` uses seed `derive_seed(seed_base, [j])`.
pub fn replicate_statistics(
    data_model: &SimulationModel,
    beta_null: &BetaVector,
    n: usize,
    a_values: &[f64],
    replications: usize,
    seed_base: u64,
    solver: &SolverConfig,
) -> Vec<Option<Vec<f64>>> {
    let phis: Vec<PhiFamily> = a_values.iter().map(|&a| PhiFamily::power(a)).collect();
    (0..replications)
        .into_par_iter()
        .map(|j| {
            let seed = derive_seed(seed_base, &[j as u64]);
            let ds = generate_sample(data_model, n, seed).ok()?;
            let g = ScoreMatrix::from_dataset(&ds, beta_null).ok()?;
            let sol = solve_multiplier(&g, solver).ok()?;
            let gammas = g.gammas(&sol.t);
            Some(phis.iter().map(|phi| statistic_from_gammas(&gammas, phi)).collect())
        })
        .collect()
}

fn group_seed(master_seed: u64, model_index: usize, n: usize) -> u64 {
    derive_seed(master_seed, &[model_index as u64, n as u64])
}

fn tally(
    stats: &[Option<Vec<f64>>],
    a_index: usize,
    critical: f64,
) -> (usize, usize, usize) {
    let mut acc = 0;
    let mut rej = 0;
    let mut fail = 0;
    for s in stats {
        match s {
            Some(v) if v[a_index] > critical => rej += 1,
            Some(_) => acc += 1,
            None => fail += 1,
        }
    }
    (acc, rej, fail)
}

/// One cell of the grid: acceptance of `H0: beta = (beta0, beta1)` under the
/// power divergence with index `a`, on data from the same model.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    model: &SimulationModel,
    n: usize,
    a: f64,
    level: f64,
    approx: Approximation,
    replications: usize,
    seed_base: u64,
    solver: &SolverConfig,
) -> Result<CellRecord, SimError> {
    let stats = replicate_statistics(model, &model.beta(), n, &[a], replications, seed_base, solver);
    let crit = critical_value(approx, n, 2, level)?;
    let (acc, rej, fail) = tally(&stats, 0, crit);
    Ok(CellRecord::new(1, n, a, level, approx, acc, rej, fail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    pub cells: Vec<CellRecord>,
}

impl SimulationGrid {
    pub fn get(&self, model: usize, n: usize, a: f64, level: f64, approx: Approximation) -> Option<&CellRecord> {
        self.cells.iter().find(|c| {
            c.model == model && c.n == n && c.a == a && c.level == level && c.approx == approx
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "n", "a", "level", "approx", "acceptance", "stderr", "failed", "flagged"])?;
        for c in &self.cells {
            w.write_record([
                c.model.to_string(),
                c.n.to_string(),
                c.a.to_string(),
                c.level.to_string(),
                c.approx.to_string(),
                c.acceptance.to_string(),
                c.stderr.to_string(),
                c.failed.to_string(),
                c.flagged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One long-format CSV per `(model, level)` in `dir`, named
    /// `plot_model<m>_level<l>.csv`. Returns the written paths.
    pub fn write_plot_data(&self, dir: &Path) -> Result<Vec<PathBuf>, SimError> {
        std::fs::create_dir_all(dir)?;
        let mut keys: Vec<(usize, f64)> = Vec::new();
        for c in &self.cells {
            if !keys.contains(&(c.model, c.level)) {
                keys.push((c.model, c.level));
            }
        }
        let mut paths = Vec::new();
        for (model, level) in keys {
            let path = dir.join(format!("plot_model{model}_level{level}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["n", "a", "approx", "acceptance", "stderr", "lower", "upper", "flagged"])?;
            for c in self.cells.iter().filter(|c| c.model == model && c.level == level) {
                let half = 1.96 * c.stderr;
                w.write_record([
                    c.n.to_string(),
                    c.a.to_string(),
                    c.approx.to_string(),
                    c.acceptance.to_string(),
                    c.stderr.to_string(),
                    (c.acceptance - half).max(0.0).to_string(),
                    (c.acceptance + half).min(1.0).to_string(),
                    c.flagged.to_string(),
                ])?;
            }
            w.flush()?;
            paths.push(path);
        }
        Ok(paths)
    }

    /// Fixed-width table with 6 significant digits for the console.
    pub fn summary_table(&self) -> String {
        let mut out = String::from("model      n        a  level  approx  acceptance      stderr  failed  near\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:>5} {:>6} {:>8} {:>6} {:>7} {:>11.6} {:>11.6} {:>7} {:>5}\n",
                c.model,
                c.n,
                c.a,
                c.level,
                c.approx.as_str(),
                c.acceptance,
                c.stderr,
                c.failed,
                if c.flagged { "*" } else { "" }
            ));
        }
        out
    }
}

fn run_grid_inner(config: &SimulationConfig) -> Result<SimulationGrid, SimError> {
    let mut cells = Vec::new();
    for (mi, model) in config.models.iter().enumerate() {
        for &n in &config.sample_sizes {
            if config.a_values.is_empty() {
                continue;
            }
            let seed = group_seed(config.master_seed, mi, n);
            let stats = replicate_statistics(
                model,
                &model.beta(),
                n,
                &config.a_values,
                config.replications,
                seed,
                &config.solver,
            );
            for (ai, &a) in config.a_values.iter().enumerate() {
                for &level in &config.levels {
                    for &approx in &config.approximations {
                        let crit = critical_value(approx, n, 2, level)?;
                        let (acc, rej, fail) = tally(&stats, ai, crit);
                        cells.push(CellRecord::new(mi + 1, n, a, level, approx, acc, rej, fail));
                    }
                }
            }
        }
    }
    Ok(mark_near(SimulationGrid { cells }, config.dale_d))
}

/// Runs every cell of the grid. `threads` bounds the worker pool; results do
/// not depend on it.
pub fn run_grid(config: &SimulationConfig, threads: Option<usize>) -> Result<SimulationGrid, SimError> {
    config.validate()?;
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| SimError::ThreadPool(e.to_string()))?;
            pool.install(|| run_grid_inner(config))
        }
        None => run_grid_inner(config),
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Sizes `alpha_hat` with `|logit(1 - alpha_hat) - logit(1 - alpha)| <= d`.
pub fn dale_interval(alpha: f64, d: f64) -> (f64, f64) {
    let l = logit(1.0 - alpha);
    (1.0 - sigmoid(l + d), 1.0 - sigmoid(l - d))
}

/// Whether a simulated size lies strictly inside the Dale interval.
pub fn is_near(size: f64, alpha: f64, d: f64) -> bool {
    let (lo, hi) = dale_interval(alpha, d);
    lo < size && size < hi
}

/// Flags cells whose exact size `1 - acceptance` is near the nominal size.
pub fn mark_near(mut grid: SimulationGrid, d: f64) -> SimulationGrid {
    for c in &mut grid.cells {
        let effective = c.accepted + c.rejected;
        c.flagged = effective > 0 && is_near(1.0 - c.acceptance, 1.0 - c.level, d);
    }
    grid
}
