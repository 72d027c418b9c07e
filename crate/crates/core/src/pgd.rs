//! Interpolated personalized gradient descent.
//!
//! Every honest client runs its own federated loop: at each round it collects
//! the honest gradients at its current model, lets the adversaries add `f`
//! vectors, robustly aggregates all `n` of them and steps along
//! `(1 - λ) ∇L_i + λ R`, projecting back onto the parameter ball.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregatorSpec};
use crate::attacks::{Adversary, AttackSpec};
use crate::error::{invalid, Error, Result};
use crate::numerics::{mean_vectors, project_ball, Vector};
use crate::tasks::{gradient_spread_sq, interpolated_loss, Task};

pub const DEFAULT_THETA_RADIUS: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1/(2L)` from the task's smoothness constant.
    Auto,
    Fixed(f64),
}

impl StepSize {
    pub fn resolve<T: Task + ?Sized>(&self, task: &T) -> f64 {
        match *self {
            StepSize::Auto => task.constants().default_step(),
            StepSize::Fixed(eta) => eta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Vector(Vector),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub lambda: f64,
    pub eta: StepSize,
    pub iterations: usize,
    pub theta_radius: f64,
    pub init: Init,
    pub aggregator: AggregatorSpec,
    pub attack: AttackSpec,
}

impl PgdConfig {
    pub fn new(lambda: f64, iterations: usize, aggregator: AggregatorSpec, attack: AttackSpec) -> Self {
        Self {
            lambda,
            eta: StepSize::Auto,
            iterations,
            theta_radius: DEFAULT_THETA_RADIUS,
            init: Init::Zero,
            aggregator,
            attack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(invalid("eta", format!("must be positive, got {eta}")));
            }
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be at least 1"));
        }
        if !(self.theta_radius > 0.0) || !self.theta_radius.is_finite() {
            return Err(invalid("theta_radius", "must be positive"));
        }
        Ok(())
    }
}

/// State after iteration `t` (index 0 is the initialization).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub theta: Vector,
    /// `(1 - λ) L_i(θ_t) + λ L_C(θ_t)`.
    pub interp_loss: f64,
    /// `‖∇L_i(θ_t)‖`.
    pub local_grad_norm: f64,
    /// `‖R_t - ∇L_C(θ_{t-1})‖`; absent at `t = 0` and whenever `λ = 0`.
    pub robust_agg_deviation: Option<f64>,
    /// `(1/|C|) Σ_j ‖∇L_j(θ_{t-1}) - ∇L_C(θ_{t-1})‖²`, recorded with the deviation.
    pub honest_spread_sq: Option<f64>,
}

impl IterRecord {
    /// Realized robustness ratio of this round's aggregate.
    pub fn kappa_ratio(&self) -> Option<f64> {
        let dev = self.robust_agg_deviation?;
        let spread = self.honest_spread_sq?;
        let num = dev * dev;
        Some(if spread > 0.0 {
            num / spread
        } else if num > 0.0 {
            f64::INFINITY
        } else {
            0.0
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub client: usize,
    pub lambda: f64,
    pub eta: f64,
    pub records: Vec<IterRecord>,
    /// Set when the minimizer of the interpolated loss (closed form, or the
    /// best iterate when none is known) lies within 1% of the ball boundary.
    pub boundary_minimizer: bool,
}

impl Trajectory {
    pub fn final_theta(&self) -> &Vector {
        &self.records.last().expect("trajectory has t = 0").theta
    }

    pub fn final_interp_loss(&self) -> f64 {
        self.records.last().expect("trajectory has t = 0").interp_loss
    }

    /// Largest realized robustness ratio along the run; 0 if nothing was aggregated.
    pub fn realized_kappa(&self) -> f64 {
        self.records
            .iter()
            .filter_map(IterRecord::kappa_ratio)
            .fold(0.0, f64::max)
    }

    pub fn thetas(&self) -> Vec<Vector> {
        self.records.iter().map(|r| r.theta.clone()).collect()
    }

    /// Dumps `t,interp_loss,local_grad_norm,deviation` rows; the deviation is
    /// empty where nothing was aggregated.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "interp_loss", "local_grad_norm", "deviation"])?;
        for (t, r) in self.records.iter().enumerate() {
            w.serialize((t, r.interp_loss, r.local_grad_norm, r.robust_agg_deviation))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of the recorded aggregation deviations, if any were recorded.
    pub fn mean_deviation(&self) -> Option<f64> {
        let devs: Vec<f64> = self.records.iter().filter_map(|r| r.robust_agg_deviation).collect();
        (!devs.is_empty()).then(|| devs.iter().sum::<f64>() / devs.len() as f64)
    }
}

struct RoundView {
    interp_loss: f64,
    local_grad: Vector,
    direction: Vector,
    deviation: Option<f64>,
    spread: Option<f64>,
}

fn round<T: Task + ?Sized>(
    task: &T,
    client: usize,
    cfg: &PgdConfig,
    adversary: &dyn Adversary,
    theta: &Vector,
) -> Result<RoundView> {
    let lambda = cfg.lambda;
    if lambda == 0.0 {
        // Local learning: no peer or adversarial vector is ever requested.
        let (loss, grad) = task.loss_and_grad(client, theta)?;
        return Ok(RoundView {
            interp_loss: loss,
            direction: grad.clone(),
            local_grad: grad,
            deviation: None,
            spread: None,
        });
    }
    let mut losses = Vec::with_capacity(task.num_clients());
    let mut grads = Vec::with_capacity(task.num_clients() + adversary.count());
    for j in 0..task.num_clients() {
        let (l, g) = task.loss_and_grad(j, theta)?;
        losses.push(l);
        grads.push(g);
    }
    let honest = grads.len();
    let honest_mean = mean_vectors(&grads)?;
    let spread = grads.iter().map(|g| g.dist_sq(&honest_mean)).sum::<f64>() / honest as f64;
    let corrupted = adversary.corrupt(&grads, &cfg.aggregator)?;
    if corrupted.len() != adversary.count() {
        return Err(invalid("attack", "adversary returned the wrong number of vectors"));
    }
    grads.extend(corrupted);
    let robust = aggregate(&cfg.aggregator, &grads)?;
    let local_grad = grads.swap_remove(client);
    let mut direction = local_grad.scale(1.0 - lambda);
    direction.axpy(lambda, &robust);
    let mean_loss = losses.iter().sum::<f64>() / honest as f64;
    Ok(RoundView {
        interp_loss: (1.0 - lambda) * losses[client] + lambda * mean_loss,
        local_grad,
        direction,
        deviation: Some(robust.dist_sq(&honest_mean).sqrt()),
        spread: Some(spread),
    })
}

/// Runs the protocol for one honest client with the configured attack.
pub fn run_client<T: Task + ?Sized>(task: &T, client: usize, cfg: &PgdConfig) -> Result<Trajectory> {
    run_client_with(task, client, cfg, &cfg.attack)
}

/// Runs the protocol for one honest client against an arbitrary adversary.
pub fn run_client_with<T: Task + ?Sized>(
    task: &T,
    client: usize,
    cfg: &PgdConfig,
    adversary: &dyn Adversary,
) -> Result<Trajectory> {
    cfg.validate()?;
    task.check_client(client)?;
    let eta = cfg.eta.resolve(task);
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("resolved step {eta} is not positive")));
    }
    let mut theta = match &cfg.init {
        Init::Zero => Vector::zeros(task.dim()),
        Init::Vector(v) => {
            task.check_theta(v)?;
            project_ball(v, cfg.theta_radius)?
        }
    };
    let mut records: Vec<IterRecord> = Vec::with_capacity(cfg.iterations + 1);
    let mut pending: Option<(f64, Option<f64>)> = None;
    for _ in 0..cfg.iterations {
        let view = round(task, client, cfg, adversary, &theta)?;
        records.push(IterRecord {
            theta: theta.clone(),
            interp_loss: view.interp_loss,
            local_grad_norm: view.local_grad.norm(),
            robust_agg_deviation: pending.map(|(d, _)| d),
            honest_spread_sq: pending.and_then(|(_, s)| s),
        });
        pending = view.deviation.map(|d| (d, view.spread));
        let mut next = theta;
        next.axpy(-eta, &view.direction);
        if !next.is_finite() {
            return Err(Error::NonFinite("iterate"));
        }
        theta = project_ball(&next, cfg.theta_radius)?;
    }
    let (loss, grad) = task.loss_and_grad(client, &theta)?;
    let interp = if cfg.lambda == 0.0 {
        loss
    } else {
        interpolated_loss(task, client, cfg.lambda, &theta)?
    };
    records.push(IterRecord {
        theta,
        interp_loss: interp,
        local_grad_norm: grad.norm(),
        robust_agg_deviation: pending.map(|(d, _)| d),
        honest_spread_sq: pending.and_then(|(_, s)| s),
    });

    let limit = 0.99 * cfg.theta_radius;
    let boundary_minimizer = match task.interpolated_minimizer(client, cfg.lambda) {
        Some(m) => m.norm() >= limit,
        None => records
            .iter()
            .min_by(|a, b| a.interp_loss.total_cmp(&b.interp_loss))
            .is_some_and(|r| r.theta.norm() >= limit),
    };
    Ok(Trajectory {
        client,
        lambda: cfg.lambda,
        eta,
        records,
        boundary_minimizer,
    })
}

/// Independent runs for every honest client, in client order.
pub fn run_all<T: Task + ?Sized>(task: &T, cfg: &PgdConfig) -> Result<Vec<Trajectory>> {
    (0..task.num_clients())
        .into_par_iter()
        .map(|i| run_client(task, i, cfg))
        .collect()
}

/// `max_θ sqrt((1/|C|) Σ_i ‖∇L_i(θ) - ∇L_C(θ)‖²)` over the given points.
pub fn estimate_g<T: Task + ?Sized>(task: &T, thetas: &[Vector]) -> Result<f64> {
    if thetas.is_empty() {
        return Err(Error::Empty("theta probe set"));
    }
    thetas
        .iter()
        .map(|t| gradient_spread_sq(task, t).map(f64::sqrt))
        .try_fold(0.0f64, |acc, g| g.map(|g| acc.max(g)))
}

/// Final-iterate outcome for one client at one λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub client: usize,
    pub final_interp_loss: f64,
    /// Gap to the closed-form interpolated minimum, when the task has one.
    pub suboptimality: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Mean aggregation deviation; absent at `λ = 0`.
    pub mean_deviation: Option<f64>,
    pub boundary_minimizer: bool,
}

/// Runs every honest client at every λ of the grid. Rows are ordered by
/// `(λ, client)`.
pub fn lambda_sweep<T: Task + ?Sized>(task: &T, template: &PgdConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(invalid("lambdas", "grid is empty"));
    }
    let cells: Vec<(f64, usize)> = lambdas
        .iter()
        .flat_map(|&l| (0..task.num_clients()).map(move |i| (l, i)))
        .collect();
    cells
        .into_par_iter()
        .map(|(lambda, client)| {
            let cfg = PgdConfig {
                lambda,
                ..template.clone()
            };
            let traj = run_client(task, client, &cfg)?;
            let theta = traj.final_theta();
            let suboptimality = match task.interpolated_minimizer(client, lambda) {
                Some(opt) => Some(traj.final_interp_loss() - interpolated_loss(task, client, lambda, &opt)?),
                None => None,
            };
            let eval = task.evaluate(client, theta).transpose()?;
            Ok(SweepRow {
                lambda,
                client,
                final_interp_loss: traj.final_interp_loss(),
                suboptimality,
                test_loss: eval.map(|e| e.test_loss),
                test_accuracy: eval.map(|e| e.test_accuracy),
                mean_deviation: traj.mean_deviation(),
                boundary_minimizer: traj.boundary_minimizer,
            })
        })
        .collect()
}

/// Mean and standard error of one metric per λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

/// Summarizes `metric` per λ over all rows (clients and, if concatenated, seeds).
pub fn summarize_sweep(rows: &[SweepRow], metric: impl Fn(&SweepRow) -> Option<f64>) -> Vec<LambdaSummary> {
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    lambdas
        .into_iter()
        .map(|lambda| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.lambda == lambda).filter_map(&metric).collect();
            let (mean, stderr) = mean_stderr(&xs);
            LambdaSummary {
                lambda,
                mean,
                stderr,
                count: xs.len(),
            }
        })
        .collect()
}

/// Sample mean and standard error of the mean (0 for fewer than two samples).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Rule;
    use crate::numerics::RngStream;
    use crate::tasks::QuadraticTask;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn task(clients: usize, dim: usize, spread: f64, seed: u64) -> QuadraticTask {
        let mut rng = RngStream::new(seed).rng();
        QuadraticTask::random(&mut rng, clients, dim, &Vector::filled(dim, 1.0), spread).unwrap()
    }

    fn robust(f: usize) -> AggregatorSpec {
        AggregatorSpec::nnm_then(Rule::TrimmedMean, f)
    }

    struct NanAdversary(usize);

    impl Adversary for NanAdversary {
        fn count(&self) -> usize {
            self.0
        }
        fn corrupt(&self, honest: &[Vector], _: &AggregatorSpec) -> Result<Vec<Vector>> {
            Ok(vec![Vector::from_raw(vec![f64::NAN; honest[0].dim()]); self.0])
        }
    }

    #[test]
    fn local_step_halves_distance_to_center() {
        let t = QuadraticTask::new(vec![v(&[4.0, -2.0]), v(&[0.0, 0.0]), v(&[1.0, 1.0])]).unwrap();
        let cfg = PgdConfig::new(0.0, 3, robust(1), AttackSpec::sign_flip(1));
        let traj = run_client(&t, 0, &cfg).unwrap();
        assert_eq!(traj.records.len(), 4);
        assert_eq!(traj.eta, 0.5);
        assert_eq!(traj.records[1].theta.as_slice(), &[2.0, -1.0]);
        assert_eq!(traj.records[2].theta.as_slice(), &[3.0, -1.5]);
        for (k, r) in traj.records.iter().enumerate() {
            let gap = r.theta.dist_sq(&t.centers()[0]).sqrt();
            assert!((gap - 20f64.sqrt() * 0.5f64.powi(k as i32)).abs() < 1e-12);
            assert!(r.robust_agg_deviation.is_none());
        }
    }

    #[test]
    fn local_learning_never_reads_peers() {
        let t = task(5, 3, 1.0, 3);
        let cfg = PgdConfig::new(0.0, 20, robust(2), AttackSpec::none(2));
        let clean = run_client(&t, 1, &cfg).unwrap();
        let poisoned = run_client_with(&t, 1, &cfg, &NanAdversary(2)).unwrap();
        assert_eq!(clean, poisoned);
        let cfg = PgdConfig { lambda: 0.3, ..cfg };
        assert!(run_client_with(&t, 1, &cfg, &NanAdversary(2)).is_err());
    }

    #[test]
    fn homogeneous_clients_converge_under_attack() {
        let c = v(&[3.0, -1.0, 2.0]);
        let t = QuadraticTask::new(vec![c.clone(); 8]).unwrap();
        let cfg = PgdConfig::new(0.7, 200, robust(2), AttackSpec::sign_flip(2));
        for traj in run_all(&t, &cfg).unwrap() {
            assert!(traj.final_theta().dist_sq(&c).sqrt() < 1e-6);
            assert_eq!(traj.realized_kappa(), 0.0);
        }
    }

    #[test]
    fn reaches_closed_form_minimizer_without_attack() {
        let t = task(6, 4, 2.0, 11);
        let cfg = PgdConfig::new(0.5, 200, AggregatorSpec::average(), AttackSpec::none(0));
        for lambda in [0.0, 0.25, 0.5, 1.0] {
            let cfg = PgdConfig { lambda, ..cfg.clone() };
            for traj in run_all(&t, &cfg).unwrap() {
                let opt = t.interpolated_minimizer(traj.client, lambda).unwrap();
                assert!(traj.final_theta().dist_sq(&opt).sqrt() < 1e-6, "λ={lambda}");
                assert!(!traj.boundary_minimizer);
            }
        }
    }

    #[test]
    fn far_minimizer_is_flagged_and_iterates_stay_in_ball() {
        let t = QuadraticTask::new(vec![v(&[50.0, 0.0]), v(&[-2.0, 0.0]), v(&[0.0, 1.0])]).unwrap();
        let mut cfg = PgdConfig::new(0.0, 30, AggregatorSpec::average(), AttackSpec::none(0));
        cfg.theta_radius = 10.0;
        let traj = run_client(&t, 0, &cfg).unwrap();
        assert!(traj.boundary_minimizer);
        assert!(traj.records.iter().all(|r| r.theta.norm() <= 10.0 + 1e-12));
        assert!((traj.final_theta().norm() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn deviation_is_recorded_from_first_step() {
        let t = task(7, 2, 1.0, 5);
        let cfg = PgdConfig::new(0.5, 5, AggregatorSpec::average(), AttackSpec::sign_flip(2));
        let traj = run_client(&t, 0, &cfg).unwrap();
        assert!(traj.records[0].robust_agg_deviation.is_none());
        assert!(traj.records[1..].iter().all(|r| r.robust_agg_deviation.is_some()));
        assert!(traj.realized_kappa() > 0.0);
        assert!(traj.mean_deviation().unwrap() > 0.0);
    }

    #[test]
    fn parallel_runs_match_serial() {
        let t = task(9, 3, 1.5, 21);
        let cfg = PgdConfig::new(0.6, 40, robust(3), AttackSpec::sign_flip(3));
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = one.install(|| run_all(&t, &cfg)).unwrap();
        let b = many.install(|| run_all(&t, &cfg)).unwrap();
        let serial: Vec<_> = (0..9).map(|i| run_client(&t, i, &cfg).unwrap()).collect();
        assert_eq!(a, b);
        assert_eq!(a, serial);
    }

    #[test]
    fn invalid_configurations() {
        let t = task(4, 2, 1.0, 0);
        let base = PgdConfig::new(0.5, 10, AggregatorSpec::average(), AttackSpec::none(0));
        assert!(run_client(&t, 4, &base).is_err());
        for cfg in [
            PgdConfig { lambda: 1.5, ..base.clone() },
            PgdConfig { iterations: 0, ..base.clone() },
            PgdConfig { eta: StepSize::Fixed(0.0), ..base.clone() },
            PgdConfig { theta_radius: -1.0, ..base.clone() },
            PgdConfig { init: Init::Vector(v(&[1.0, 2.0, 3.0])), ..base.clone() },
        ] {
            assert!(run_client(&t, 0, &cfg).is_err());
        }
        assert!(estimate_g(&t, &[]).is_err());
        assert!(lambda_sweep(&t, &base, &[]).is_err());
    }

    #[test]
    fn g_matches_quadratic_heterogeneity() {
        let t = task(6, 3, 2.0, 8);
        let g = estimate_g(&t, &[Vector::zeros(3), v(&[5.0, 5.0, 5.0])]).unwrap();
        assert!((g - t.heterogeneity()).abs() < 1e-12);
        let same = QuadraticTask::new(vec![v(&[1.0, 2.0]); 4]).unwrap();
        assert_eq!(estimate_g(&same, &[v(&[0.0, 3.0])]).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_clients_share_trajectories() {
        let t = task(5, 3, 1.0, 13);
        let cfg = PgdConfig::new(1.0, 30, AggregatorSpec::average(), AttackSpec::none(0));
        let runs = run_all(&t, &cfg).unwrap();
        for r in &runs[1..] {
            assert_eq!(r.thetas(), runs[0].thetas());
        }
    }

    #[test]
    fn homogeneous_full_collaboration_contracts() {
        let c = v(&[2.0, -4.0]);
        let t = QuadraticTask::new(vec![c.clone(); 3]).unwrap();
        let cfg = PgdConfig::new(1.0, 25, AggregatorSpec::average(), AttackSpec::none(0));
        let traj = run_client(&t, 2, &cfg).unwrap();
        let start = c.norm();
        for (k, r) in traj.records.iter().enumerate() {
            assert!(r.theta.dist_sq(&c).sqrt() <= 0.5f64.powi(k as i32) * start + 1e-12);
        }
    }

    #[test]
    fn sign_flip_slows_plain_average() {
        // With n = 4 and f = 1 the average becomes half the honest gradient:
        // the fixed point survives but each step only closes a quarter of the gap.
        let t = task(3, 2, 1.0, 17);
        let cfg = PgdConfig::new(1.0, 20, AggregatorSpec::average(), AttackSpec::sign_flip(1));
        let attacked = run_client(&t, 0, &cfg).unwrap();
        let clean = run_client(&t, 0, &PgdConfig { attack: AttackSpec::none(0), ..cfg }).unwrap();
        let opt = t.interpolated_minimizer(0, 1.0).unwrap();
        let best = interpolated_loss(&t, 0, 1.0, &opt).unwrap();
        let gap = attacked.final_interp_loss() - best;
        assert!(gap > 0.0 && gap < attacked.records[0].interp_loss - best);
        assert!(gap > clean.final_interp_loss() - best);
        let expected = 0.75f64.powi(20) * attacked.records[0].theta.dist_sq(&opt).sqrt();
        assert!((attacked.final_theta().dist_sq(&opt).sqrt() - expected).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_one_row_per_iterate() {
        let t = task(4, 2, 1.0, 1);
        let cfg = PgdConfig::new(0.5, 7, AggregatorSpec::average(), AttackSpec::none(0));
        let mut buf = Vec::new();
        run_client(&t, 0, &cfg).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "t,interp_loss,local_grad_norm,deviation");
        assert!(lines[1].ends_with(','));
    }

    #[test]
    fn sweep_rows_and_summary() {
        let t = task(5, 2, 1.0, 2);
        let cfg = PgdConfig::new(0.0, 100, AggregatorSpec::average(), AttackSpec::none(0));
        let rows = lambda_sweep(&t, &cfg, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rows.len(), 15);
        assert_eq!((rows[5].lambda, rows[5].client), (0.5, 0));
        assert!(rows.iter().all(|r| r.suboptimality.unwrap().abs() < 1e-9));
        assert!(rows.iter().all(|r| r.test_accuracy.is_none()));
        assert!(rows[..5].iter().all(|r| r.mean_deviation.is_none()));
        let s = summarize_sweep(&rows, |r| Some(r.final_interp_loss));
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.count == 5));
        assert_eq!(mean_stderr(&[1.0, 3.0]), (2.0, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        // Final suboptimality respects the convergence bound evaluated with the
        // run's realized robustness ratio and heterogeneity.
        #[test]
        fn suboptimality_within_convergence_bound(
            seed in 0u64..1000,
            lambda in 0.0f64..=1.0,
            spread in 0.1f64..3.0,
            iterations in 1usize..60,
        ) {
            let t = task(10, 3, spread, seed);
            let cfg = PgdConfig::new(lambda, iterations, robust(3), AttackSpec::sign_flip(3));
            let traj = run_client(&t, 0, &cfg).unwrap();
            let opt = t.interpolated_minimizer(0, lambda).unwrap();
            let best = interpolated_loss(&t, 0, lambda, &opt).unwrap();
            let l0 = traj.records[0].interp_loss - best;
            let g = estimate_g(&t, &traj.thetas()).unwrap();
            let kappa = traj.realized_kappa();
            prop_assume!(!traj.boundary_minimizer);
            for (k, r) in traj.records.iter().enumerate() {
                let bound = 5.0 * lambda * lambda * kappa * g * g + 0.5f64.powi(k as i32) * l0;
                prop_assert!(r.interp_loss - best <= bound + 1e-9, "t={}", k);
            }
        }

        #[test]
        fn iterates_never_leave_ball(seed in 0u64..1000, radius in 0.5f64..5.0, lambda in 0.0f64..=1.0) {
            let t = task(7, 2, 4.0, seed);
            let mut cfg = PgdConfig::new(lambda, 15, robust(2), AttackSpec::sign_flip(2));
            cfg.theta_radius = radius;
            cfg.init = Init::Vector(v(&[10.0, -10.0]));
            let traj = run_client(&t, 1, &cfg).unwrap();
            prop_assert!(traj.records.iter().all(|r| r.theta.norm() <= radius * (1.0 + 1e-12)));
        }
    }
}
