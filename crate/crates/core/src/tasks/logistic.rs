//! L2-regularized logistic regression over synthetic two-class Gaussian data.
//!
//! Class `y = 1` features are drawn from `N(+u, I)` and `y = 0` features from
//! `N(-u, I)`. Each honest client gets its own class balance from a
//! symmetric Dirichlet draw, and its test set reuses that balance exactly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Evaluation, SmoothnessConstants, Task};
use crate::error::{invalid, Error, Result};
use crate::numerics::{purpose, sample_dirichlet, RngStream, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(invalid("split", format!("expected train or test, got `{other}`"))),
        }
    }
}

/// Labeled points stored row-major. When `intercept` is set, every row
/// carries a trailing constant 1 after the `raw_dim` features.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    raw_dim: usize,
    intercept: bool,
    features: Vec<f64>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(rows: &[Vector], labels: &[u8], intercept: bool) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(invalid("labels", "one label per row required"));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(invalid("labels", "must be 0 or 1"));
        }
        let raw_dim = rows.first().map(|r| r.dim()).unwrap_or(0);
        let width = raw_dim + usize::from(intercept);
        let mut features = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.dim() != raw_dim {
                return Err(Error::DimensionMismatch {
                    expected: raw_dim,
                    found: r.dim(),
                });
            }
            if !r.is_finite() {
                return Err(Error::NonFinite("features"));
            }
            features.extend_from_slice(r.as_slice());
            if intercept {
                features.push(1.0);
            }
        }
        Ok(Self {
            raw_dim,
            intercept,
            features,
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Model dimension: raw features plus the intercept column.
    pub fn width(&self) -> usize {
        self.raw_dim + usize::from(self.intercept)
    }

    pub fn raw_dim(&self) -> usize {
        self.raw_dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.features[i * w..(i + 1) * w]
    }

    /// `λ_max(XᵀX)` by power iteration.
    fn gram_top_eigenvalue(&self) -> f64 {
        let w = self.width();
        if self.is_empty() {
            return 0.0;
        }
        let mut v: Vec<f64> = (0..w).map(|k| 1.0 + 0.01 * k as f64).collect();
        let mut estimate = 0.0;
        for _ in 0..10_000 {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let mut next = vec![0.0; w];
            for i in 0..self.len() {
                let x = self.row(i);
                let xv: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (n, a) in next.iter_mut().zip(x) {
                    *n += xv * a;
                }
            }
            let rayleigh: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = next;
            if (rayleigh - estimate).abs() <= 1e-9 * rayleigh.abs().max(1e-300) {
                return rayleigh;
            }
            estimate = rayleigh;
        }
        estimate
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `1 / (1 + e^t)`.
fn sigmoid_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    pub train: Dataset,
    pub test: Dataset,
    /// Drawn proportion of class 1 before rounding to counts.
    pub positive_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub n: usize,
    pub f: usize,
    pub m: usize,
    pub d: usize,
    /// Dirichlet concentration; `None` means infinity (balanced classes).
    pub alpha: Option<f64>,
    pub class_sep_norm: f64,
    pub ridge: f64,
    pub intercept: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            n: 20,
            f: 0,
            m: 32,
            d: 10,
            alpha: None,
            class_sep_norm: 2.0,
            ridge: 0.1,
            intercept: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticTask {
    clients: Vec<ClientData>,
    ridge: f64,
    class_sep: Option<Vector>,
    alpha: Option<f64>,
    constants: SmoothnessConstants,
}

impl LogisticTask {
    /// Builds a task from explicit per-client data.
    pub fn from_clients(clients: Vec<ClientData>, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0) || !ridge.is_finite() {
            return Err(invalid("ridge", format!("must be positive, got {ridge}")));
        }
        let first = clients.first().ok_or(Error::Empty("logistic clients"))?;
        let width = first.train.width();
        for c in &clients {
            if c.train.is_empty() {
                return Err(Error::Empty("training set"));
            }
            for ds in [&c.train, &c.test] {
                if !ds.is_empty() && ds.width() != width {
                    return Err(Error::DimensionMismatch {
                        expected: width,
                        found: ds.width(),
                    });
                }
            }
        }
        let top = clients
            .iter()
            .map(|c| c.train.gram_top_eigenvalue() / (4.0 * c.train.len() as f64))
            .fold(0.0f64, f64::max);
        let constants = SmoothnessConstants::new(ridge + top, ridge)?;
        Ok(Self {
            clients,
            ridge,
            class_sep: None,
            alpha: None,
            constants,
        })
    }

    pub fn clients(&self) -> &[ClientData] {
        &self.clients
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn class_sep(&self) -> Option<&Vector> {
        self.class_sep.as_ref()
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    fn client(&self, client: usize) -> Result<&ClientData> {
        self.check_client(client)?;
        Ok(&self.clients[client])
    }

    /// Fraction of misclassified held-out points.
    pub fn test_error(&self, client: usize, theta: &Vector) -> Result<f64> {
        Ok(1.0 - self.evaluate_checked(client, theta)?.test_accuracy)
    }

    fn evaluate_checked(&self, client: usize, theta: &Vector) -> Result<Evaluation> {
        self.check_theta(theta)?;
        let test = &self.client(client)?.test;
        if test.is_empty() {
            return Err(Error::Empty("test set"));
        }
        let th = theta.as_slice();
        let mut hits = 0usize;
        let mut loss = 0.0;
        for (i, &y) in test.labels().iter().enumerate() {
            let z: f64 = test.row(i).iter().zip(th).map(|(a, b)| a * b).sum();
            let s = if y == 1 { 1.0 } else { -1.0 };
            loss += softplus(-s * z);
            // σ(θᵀx) ≥ 1/2 predicts class 1, so a zero score counts as class 1.
            if u8::from(z >= 0.0) == y {
                hits += 1;
            }
        }
        Ok(Evaluation {
            test_loss: loss / test.len() as f64,
            test_accuracy: hits as f64 / test.len() as f64,
        })
    }

    /// Writes every point as `client_id,split,y,x_1..x_d`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let raw = self.clients[0].train.raw_dim();
        let mut header = vec!["client_id".to_string(), "split".to_string(), "y".to_string()];
        header.extend((1..=raw).map(|k| format!("x_{k}")));
        w.write_record(&header)?;
        for (id, c) in self.clients.iter().enumerate() {
            for (split, ds) in [(Split::Train, &c.train), (Split::Test, &c.test)] {
                for i in 0..ds.len() {
                    let mut rec = vec![id.to_string(), split.to_string(), ds.labels()[i].to_string()];
                    rec.extend(ds.row(i)[..raw].iter().map(|x| x.to_string()));
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`LogisticTask::write_csv`].
    pub fn read_csv(path: &Path, ridge: f64, intercept: bool) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut per_client: Vec<[(Vec<Vector>, Vec<u8>); 2]> = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| Error::Config {
                path: path.display().to_string(),
                message: format!("bad {what} in record {rec:?}"),
            };
            let id: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("client_id"))?;
            let split: Split = rec.get(1).ok_or_else(|| bad("split"))?.parse()?;
            let y: u8 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("y"))?;
            let xs = rec
                .iter()
                .skip(3)
                .map(|s| s.parse::<f64>().map_err(|_| bad("feature")))
                .collect::<Result<Vec<_>>>()?;
            if per_client.len() <= id {
                per_client.resize_with(id + 1, Default::default);
            }
            let slot = &mut per_client[id][split as usize];
            slot.0.push(Vector::new(xs)?);
            slot.1.push(y);
        }
        let clients = per_client
            .into_iter()
            .map(|[(tr_x, tr_y), (te_x, te_y)]| {
                let train = Dataset::new(&tr_x, &tr_y, intercept)?;
                let test = Dataset::new(&te_x, &te_y, intercept)?;
                let positive_fraction = train.positives() as f64 / train.len().max(1) as f64;
                Ok(ClientData {
                    train,
                    test,
                    positive_fraction,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_clients(clients, ridge)
    }
}

impl Task for LogisticTask {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        self.clients[0].train.width()
    }

    fn loss_and_grad(&self, client: usize, theta: &Vector) -> Result<(f64, Vector)> {
        self.check_theta(theta)?;
        let train = &self.client(client)?.train;
        let th = theta.as_slice();
        let mut grad = vec![0.0; th.len()];
        let mut loss = 0.0;
        for (i, &y) in train.labels().iter().enumerate() {
            let x = train.row(i);
            let z: f64 = x.iter().zip(th).map(|(a, b)| a * b).sum();
            let s = if y == 1 { 1.0 } else { -1.0 };
            loss += softplus(-s * z);
            let w = -s * sigmoid_neg(s * z);
            for (g, a) in grad.iter_mut().zip(x) {
                *g += w * a;
            }
        }
        let inv_m = 1.0 / train.len() as f64;
        let reg = 0.5 * self.ridge * theta.norm_sq();
        for (g, t) in grad.iter_mut().zip(th) {
            *g = *g * inv_m + self.ridge * t;
        }
        Ok((loss * inv_m + reg, Vector::from_raw(grad)))
    }

    fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    fn evaluate(&self, client: usize, theta: &Vector) -> Option<Result<Evaluation>> {
        Some(self.evaluate_checked(client, theta))
    }
}

/// Draws a synthetic task with `n - f` honest clients.
pub fn make_logistic_task(params: &LogisticParams, rng: &RngStream) -> Result<LogisticTask> {
    let LogisticParams {
        n,
        f,
        m,
        d,
        alpha,
        class_sep_norm,
        ridge,
        intercept,
    } = *params;
    if 2 * f >= n {
        return Err(invalid("f", format!("require f < n/2, got n={n}, f={f}")));
    }
    if m < 2 {
        return Err(invalid("m", "must be at least 2"));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    if let Some(a) = alpha {
        if !(a > 0.0) || !a.is_finite() {
            return Err(invalid("alpha", format!("must be positive, got {a}")));
        }
    }
    if !(class_sep_norm >= 0.0) || !class_sep_norm.is_finite() {
        return Err(invalid("class_sep", "must be nonnegative"));
    }
    let base = rng.derive(purpose::TASK);
    let mut dir_rng = base.derive(0).rng();
    let dir = Vector::from_raw((0..d).map(|_| StandardNormal.sample(&mut dir_rng)).collect());
    let u = dir.scale(class_sep_norm / dir.norm().max(f64::MIN_POSITIVE));
    let neg_u = -&u;

    let clients = (0..n - f)
        .map(|i| {
            let client_stream = base.derive_path(&[purpose::CLIENT, i as u64]);
            let p = match alpha {
                None => 0.5,
                Some(a) => sample_dirichlet(&mut client_stream.derive(0).rng(), &[a / 2.0, a / 2.0])?[0],
            };
            let positives = (p * m as f64).round() as usize;
            let draw = |split: u64| -> Result<Dataset> {
                let mut r = client_stream.derive(1 + split).rng();
                let labels: Vec<u8> = (0..m).map(|k| u8::from(k < positives)).collect();
                let rows: Vec<Vector> = labels
                    .iter()
                    .map(|&y| {
                        let center = if y == 1 { &u } else { &neg_u };
                        Vector::from_raw(
                            center
                                .iter()
                                .map(|&c| {
                                    let z: f64 = StandardNormal.sample(&mut r);
                                    c + z
                                })
                                .collect(),
                        )
                    })
                    .collect();
                Dataset::new(&rows, &labels, intercept)
            };
            Ok(ClientData {
                train: draw(0)?,
                test: draw(1)?,
                positive_fraction: p,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut task = LogisticTask::from_clients(clients, ridge)?;
    task.class_sep = Some(u);
    task.alpha = alpha;
    Ok(task)
}
