use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Experiment, ScenarioConfig};
use crate::aggregation::theoretical_kappa;
use crate::error::{Error, Result};
use crate::mean_estimation::{lambda_star_mean, run_mse_sweep};
use crate::numerics::{purpose, RngStream, Vector};
use crate::pgd::{estimate_g, lambda_sweep, run_client, PgdConfig};
use crate::tasks::{make_logistic_task, LogisticTask, Task};
use crate::theory::{discrepancy_proxy, lambda_star_class, lambda_star_exact, TheoryInputs};

pub const SQUARED_ERROR: &str = "squared_error";
pub const TEST_ACCURACY: &str = "test_accuracy";
pub const TEST_LOSS: &str = "test_loss";
pub const TRAIN_INTERP_LOSS: &str = "train_interp_loss";
pub const AGG_DEVIATION: &str = "agg_deviation";

/// One metric observation. Columns that do not apply to an experiment are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub master_seed: u64,
    pub trial: usize,
    pub client_id: usize,
    pub lambda: f64,
    pub f: usize,
    pub n: usize,
    pub m: usize,
    pub sigma: Option<f64>,
    pub sigma_h: Option<f64>,
    pub alpha: Option<f64>,
    pub attack: String,
    pub aggregator: String,
    pub metric_name: String,
    pub metric_value: f64,
}

struct RowTemplate {
    run_id: String,
    master_seed: u64,
    cfg: ScenarioConfig,
}

impl RowTemplate {
    fn row(&self, trial: usize, client_id: usize, lambda: f64, metric: &str, value: f64) -> ResultRow {
        let mean = self.cfg.experiment == Experiment::MeanEst;
        ResultRow {
            run_id: self.run_id.clone(),
            master_seed: self.master_seed,
            trial,
            client_id,
            lambda,
            f: self.cfg.f,
            n: self.cfg.n,
            m: self.cfg.m,
            sigma: mean.then_some(self.cfg.sigma),
            sigma_h: mean.then_some(self.cfg.sigma_h),
            alpha: (!mean).then(|| self.cfg.alpha.as_f64()),
            attack: self.cfg.attack.clone(),
            aggregator: self.cfg.aggregator.clone(),
            metric_name: metric.to_owned(),
            metric_value: value,
        }
    }
}

/// The logistic task a classification trial trains on.
pub fn classify_task(cfg: &ScenarioConfig, cell: &RngStream, trial: usize) -> Result<LogisticTask> {
    make_logistic_task(&cfg.logistic_params(), &cell.derive_path(&[purpose::TRIAL, trial as u64]))
}

fn run_cell(cfg: &ScenarioConfig, run_id: &str, cell: &RngStream, master_seed: u64) -> Result<Vec<ResultRow>> {
    let lambdas = cfg.lambda_grid()?;
    let tpl = RowTemplate {
        run_id: run_id.to_owned(),
        master_seed,
        cfg: cfg.clone(),
    };
    match cfg.experiment {
        Experiment::MeanEst => {
            let results = run_mse_sweep(
                &cfg.population(),
                &lambdas,
                &cfg.aggregator_spec()?,
                &cfg.attack_spec()?,
                cfg.trials,
                cell,
                cfg.clients,
            )?;
            Ok(results
                .iter()
                .map(|r| tpl.row(r.trial, r.client_index, r.lambda, SQUARED_ERROR, r.squared_error))
                .collect())
        }
        Experiment::Classify => {
            let template = cfg.pgd_template()?;
            let per_trial = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| {
                    let task = classify_task(cfg, cell, trial)?;
                    let sweep = lambda_sweep(&task, &template, &lambdas)?;
                    let mut rows = Vec::with_capacity(sweep.len() * 4);
                    for s in sweep {
                        let mut push = |name: &str, v: Option<f64>| {
                            if let Some(v) = v {
                                rows.push(tpl.row(trial, s.client, s.lambda, name, v));
                            }
                        };
                        push(TEST_ACCURACY, s.test_accuracy);
                        push(TEST_LOSS, s.test_loss);
                        push(TRAIN_INTERP_LOSS, Some(s.final_interp_loss));
                        push(AGG_DEVIATION, s.mean_deviation);
                    }
                    Ok(rows)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(per_trial.into_iter().flatten().collect())
        }
    }
}

fn metric_rank(name: &str) -> usize {
    [SQUARED_ERROR, TEST_ACCURACY, TEST_LOSS, TRAIN_INTERP_LOSS, AGG_DEVIATION]
        .iter()
        .position(|m| *m == name)
        .unwrap_or(usize::MAX)
}

/// Runs every cell of the scenario. Rows are ordered by cell, then
/// `(trial, λ, client, metric)`, whatever the thread pool size.
pub fn run_scenario(cfg: &ScenarioConfig, master_seed: u64) -> Result<Vec<ResultRow>> {
    let cells = cfg.cells()?;
    let root = RngStream::new(master_seed);
    let per_cell = cells
        .par_iter()
        .enumerate()
        .map(|(k, cell)| {
            let stream = root.derive_path(&[purpose::CELL, k as u64]);
            run_cell(&cell.config, &cell.run_id, &stream, master_seed).map_err(|e| match e {
                Error::InvalidParameter { name, reason } => Error::Config {
                    path: format!("{}.{name}", cell.run_id),
                    message: reason,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for mut cell_rows in per_cell {
        cell_rows.sort_by(|a, b| {
            (a.trial, a.lambda, a.client_id, metric_rank(&a.metric_name))
                .partial_cmp(&(b.trial, b.lambda, b.client_id, metric_rank(&b.metric_name)))
                .expect("grid values are finite")
        });
        rows.extend(cell_rows);
    }
    Ok(rows)
}

/// [`run_scenario`] on a dedicated pool of `workers` threads.
pub fn run_scenario_with_workers(cfg: &ScenarioConfig, master_seed: u64, workers: usize) -> Result<Vec<ResultRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config {
            path: "workers".into(),
            message: e.to_string(),
        })?;
    pool.install(|| run_scenario(cfg, master_seed))
}

/// Mean-estimation predictor and the plug-ins that feed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPrediction {
    pub lambda_star: f64,
    pub kappa: f64,
    pub honest: usize,
    pub local_variance: f64,
    /// Plug-in for both `‖μ_i - μ̄_C‖²` and `Δ²`.
    pub heterogeneity: f64,
}

pub fn predict_mean(cfg: &ScenarioConfig) -> Result<MeanPrediction> {
    let pop = cfg.population();
    pop.validate()?;
    let kappa = theoretical_kappa(cfg.n, cfg.f)?;
    let het = pop.heterogeneity_plugin();
    Ok(MeanPrediction {
        lambda_star: lambda_star_mean(&pop, kappa, het, het)?,
        kappa,
        honest: pop.honest(),
        local_variance: pop.local_variance(),
        heterogeneity: het,
    })
}

/// Classification predictors and the plug-ins that feed them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPredictionReport {
    pub lambda_star: f64,
    /// Set when `f = 0` or `G = 0`, where the predictor defaults to 1.
    pub degenerate: bool,
    pub lambda_star_exact: f64,
    pub beta: f64,
    pub inputs: TheoryInputs,
    /// `phi` in `inputs` comes from the empirical proxy, a lower bound.
    pub phi_is_lower_bound: bool,
    pub client: usize,
}

/// Plug-ins for client 0 on the first trial's task: `G` and the discrepancy
/// proxy are taken over the iterates of a local run and of a full
/// collaboration run, `κ = f/(n - 2f)`, `Pdim` is the model dimension and
/// `L0` the interpolated loss gap of the zero model at `λ = 1`.
pub fn predict_class(cfg: &ScenarioConfig, master_seed: u64) -> Result<ClassPredictionReport> {
    let cell = RngStream::new(master_seed).derive_path(&[purpose::CELL, 0]);
    let task = classify_task(cfg, &cell, 0)?;
    let client = 0;
    let template = cfg.pgd_template()?;
    let mut probes: Vec<Vector> = Vec::new();
    for lambda in [0.0, 1.0] {
        let traj = run_client(&task, client, &PgdConfig { lambda, ..template.clone() })?;
        probes.extend(traj.thetas());
    }
    let g = estimate_g(&task, &probes)?;
    let phi = discrepancy_proxy(&task, client, &probes)?;
    let c = task.constants();
    let initial = crate::tasks::interpolated_loss(&task, client, 1.0, &Vector::zeros(task.dim()))?;
    let best = probes
        .iter()
        .map(|t| crate::tasks::interpolated_loss(&task, client, 1.0, t))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let inputs = TheoryInputs {
        l: c.l,
        mu: c.mu,
        g,
        kappa: theoretical_kappa(cfg.n, cfg.f)?,
        pdim: task.dim(),
        m: cfg.m,
        n: cfg.n,
        f: cfg.f,
        delta: cfg.delta,
        phi,
        l0: (initial - best).max(0.0),
        t: cfg.iterations,
    };
    inputs.validate()?;
    let p = lambda_star_class(&inputs);
    Ok(ClassPredictionReport {
        lambda_star: p.lambda,
        degenerate: p.degenerate,
        lambda_star_exact: lambda_star_exact(&inputs),
        beta: inputs.beta(),
        inputs,
        phi_is_lower_bound: true,
        client,
    })
}
