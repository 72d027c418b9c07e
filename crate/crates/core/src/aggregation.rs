//! Robust aggregation rules and (f, κ)-robustness measurement.
//!
//! A rule `F` is (f, κ)-robust when, for every input set and every subset `U`
//! of `n - f` indices, `‖F(v) - mean_U‖² ≤ κ/(n-f) · Σ_{i∈U} ‖v_i - mean_U‖²`.
//! [`empirical_kappa`] measures the worst realized ratio over random inputs
//! and all subsets; it is a lower bound on the true constant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{common_dim, mean_unchecked, purpose, RngStream, Vector};

/// Largest number of subsets `empirical_kappa` will enumerate per trial.
pub const SUBSET_BUDGET: u128 = 1_000_000;

/// Base rule applied after optional nearest-neighbor mixing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Average,
    CoordinateMedian,
    TrimmedMean,
}

/// An aggregation rule together with the number of adversaries it tolerates.
///
/// NNM is a flag rather than a wrapper so that NNM can never wrap itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AggregatorSpec {
    pub rule: Rule,
    pub nnm: bool,
    pub f: usize,
}

impl AggregatorSpec {
    pub fn new(rule: Rule, f: usize) -> Self {
        Self { rule, nnm: false, f }
    }

    pub fn nnm_then(rule: Rule, f: usize) -> Self {
        Self { rule, nnm: true, f }
    }

    pub fn average() -> Self {
        Self::new(Rule::Average, 0)
    }

    pub fn with_f(self, f: usize) -> Self {
        Self { f, ..self }
    }

    /// Canonical name, e.g. `nnm_trimmed_mean`.
    pub fn name(&self) -> String {
        let base = match self.rule {
            Rule::Average => "average",
            Rule::CoordinateMedian => "median",
            Rule::TrimmedMean => "trimmed_mean",
        };
        if self.nnm {
            format!("nnm_{base}")
        } else {
            base.to_string()
        }
    }

    /// Parses a rule name; `f` is filled in by the caller.
    pub fn parse_kind(s: &str) -> Result<(Rule, bool)> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        let (nnm, base) = match s.strip_prefix("nnm_") {
            Some(rest) => (true, rest.to_string()),
            None => (false, s.clone()),
        };
        let rule = match base.as_str() {
            "average" | "avg" | "mean" => Rule::Average,
            "median" | "coordinate_median" | "cwmed" => Rule::CoordinateMedian,
            "trimmed_mean" | "tm" => Rule::TrimmedMean,
            _ => return Err(invalid("aggregator", format!("unknown rule `{s}`"))),
        };
        Ok((rule, nnm))
    }
}

impl fmt::Display for AggregatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for AggregatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (rule, nnm) = Self::parse_kind(s)?;
        Ok(Self { rule, nnm, f: 0 })
    }
}

fn check_inputs(spec: &AggregatorSpec, vs: &[Vector]) -> Result<usize> {
    let dim = common_dim(vs)?;
    let n = vs.len();
    if 2 * spec.f >= n {
        return Err(invalid(
            "f",
            format!("require f < n/2, got n={n}, f={}", spec.f),
        ));
    }
    if vs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregation input"));
    }
    Ok(dim)
}

/// Applies the rule to `vs`.
pub fn aggregate(spec: &AggregatorSpec, vs: &[Vector]) -> Result<Vector> {
    let dim = check_inputs(spec, vs)?;
    if spec.nnm {
        let mixed = nnm_unchecked(vs, spec.f, dim);
        Ok(apply_rule(spec.rule, &mixed, spec.f, dim))
    } else {
        Ok(apply_rule(spec.rule, vs, spec.f, dim))
    }
}

/// Nearest-neighbor mixing: every input is replaced by the mean of its
/// `n - f` nearest inputs in L2, itself included. Ties go to the lower index.
pub fn nnm(vs: &[Vector], f: usize) -> Result<Vec<Vector>> {
    let dim = check_inputs(&AggregatorSpec::new(Rule::Average, f), vs)?;
    Ok(nnm_unchecked(vs, f, dim))
}

fn nnm_unchecked(vs: &[Vector], f: usize, dim: usize) -> Vec<Vector> {
    let n = vs.len();
    let keep = n - f;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vs[i].dist_sq(&vs[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut order: Vec<usize> = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            order.clear();
            order.extend(0..n);
            if keep < n {
                order.select_nth_unstable_by(keep - 1, |&a, &b| {
                    row[a].total_cmp(&row[b]).then(a.cmp(&b))
                });
            }
            let chosen = &mut order[..keep];
            chosen.sort_unstable();
            mean_unchecked(chosen.iter().map(|&j| &vs[j]), dim)
        })
        .collect()
}

fn apply_rule(rule: Rule, vs: &[Vector], f: usize, dim: usize) -> Vector {
    match rule {
        Rule::Average => mean_unchecked(vs.iter(), dim),
        Rule::CoordinateMedian => per_coordinate(vs, dim, median_sorted),
        Rule::TrimmedMean => per_coordinate(vs, dim, |col| trimmed_sorted(col, f)),
    }
}

fn per_coordinate(vs: &[Vector], dim: usize, reduce: impl Fn(&[f64]) -> f64) -> Vector {
    let mut col = vec![0.0; vs.len()];
    let coords = (0..dim)
        .map(|k| {
            for (c, v) in col.iter_mut().zip(vs) {
                *c = v[k];
            }
            col.sort_unstable_by(f64::total_cmp);
            reduce(&col)
        })
        .collect();
    Vector::from_raw(coords)
}

fn median_sorted(col: &[f64]) -> f64 {
    let n = col.len();
    if n % 2 == 1 {
        col[n / 2]
    } else {
        0.5 * (col[n / 2 - 1] + col[n / 2])
    }
}

fn trimmed_sorted(col: &[f64], f: usize) -> f64 {
    let kept = &col[f..col.len() - f];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// `f / (n - 2f)`, the plug-in robustness constant.
pub fn theoretical_kappa(n: usize, f: usize) -> Result<f64> {
    if 2 * f >= n {
        return Err(invalid("f", format!("require n - 2f >= 1, got n={n}, f={f}")));
    }
    Ok(f as f64 / (n - 2 * f) as f64)
}

/// Ratio `‖output - mean_U‖² / ((1/|U|) Σ_{i∈U} ‖v_i - mean_U‖²)`.
///
/// Zero denominator gives `+∞` when the numerator is positive and `0` otherwise.
pub fn robustness_ratio(output: &Vector, vs: &[Vector], subset: &[usize]) -> f64 {
    let dim = output.dim();
    let center = mean_unchecked(subset.iter().map(|&i| &vs[i]), dim);
    let num = output.dist_sq(&center);
    let den = subset.iter().map(|&i| vs[i].dist_sq(&center)).sum::<f64>() / subset.len() as f64;
    ratio(num, den)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Calls `visit` with every `(n - f)`-subset of `0..n` in lexicographic order
/// of the excluded indices.
fn for_each_subset(n: usize, f: usize, mut visit: impl FnMut(&[usize])) {
    let mut excluded: Vec<usize> = (0..f).collect();
    let mut subset = Vec::with_capacity(n - f);
    loop {
        subset.clear();
        let mut e = excluded.iter().peekable();
        for i in 0..n {
            if e.peek() == Some(&&i) {
                e.next();
            } else {
                subset.push(i);
            }
        }
        visit(&subset);
        // advance the combination of excluded indices
        let mut k = f;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if excluded[k] < n - f + k {
                excluded[k] += 1;
                for j in (k + 1)..f {
                    excluded[j] = excluded[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Maximum robustness ratio of `spec` on `vs` over all subsets of size `n - f`.
pub fn worst_case_ratio(spec: &AggregatorSpec, vs: &[Vector]) -> Result<f64> {
    let n = vs.len();
    let subsets = binomial(n, spec.f.min(n));
    if subsets > SUBSET_BUDGET {
        return Err(Error::BudgetExceeded {
            subsets,
            budget: SUBSET_BUDGET,
        });
    }
    let output = aggregate(spec, vs)?;
    let mut worst = 0.0f64;
    for_each_subset(n, spec.f, |u| {
        worst = worst.max(robustness_ratio(&output, vs, u));
    });
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    /// Max realized ratio; `+∞` when some subset has zero spread but the
    /// output is off its mean.
    pub empirical_kappa: f64,
    pub theoretical_kappa: f64,
    pub n: usize,
    pub f: usize,
    pub d: usize,
    pub trials: usize,
}

/// Draws one adversarial configuration: `n - f` standard Gaussian honest
/// vectors followed by `f` adversarial vectors with norm at most `magnitude`.
///
/// Even trials place all adversaries at one point, odd trials scatter them.
fn draw_configuration(
    stream: &RngStream,
    n: usize,
    f: usize,
    d: usize,
    magnitude: f64,
    collude: bool,
) -> Vec<Vector> {
    let mut rng = stream.rng();
    let gauss = |rng: &mut crate::numerics::StreamRng| -> Vector {
        Vector::from_raw((0..d).map(|_| StandardNormal.sample(rng)).collect())
    };
    let mut vs: Vec<Vector> = (0..n - f).map(|_| gauss(&mut rng)).collect();
    let adversary = |rng: &mut crate::numerics::StreamRng| -> Vector {
        let dir = gauss(rng);
        let norm = dir.norm().max(f64::MIN_POSITIVE);
        let radius = magnitude * (1.0 - rng.random::<f64>());
        dir.scale(radius / norm)
    };
    if collude {
        let a = adversary(&mut rng);
        vs.extend(std::iter::repeat_n(a, f));
    } else {
        for _ in 0..f {
            let a = adversary(&mut rng);
            vs.push(a);
        }
    }
    vs
}

/// Worst robustness ratio over `trials` random configurations.
pub fn empirical_kappa(
    spec: &AggregatorSpec,
    n: usize,
    f: usize,
    d: usize,
    trials: usize,
    magnitude: f64,
    rng: &RngStream,
) -> Result<KappaEstimate> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    if !(magnitude > 0.0) || !magnitude.is_finite() {
        return Err(invalid("magnitude", format!("must be positive, got {magnitude}")));
    }
    let theoretical = theoretical_kappa(n, f)?;
    let subsets = binomial(n, f);
    if subsets > SUBSET_BUDGET {
        return Err(Error::BudgetExceeded {
            subsets,
            budget: SUBSET_BUDGET,
        });
    }
    let spec = spec.with_f(f);
    let base = rng.derive(purpose::KAPPA);
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let vs = draw_configuration(&base.derive(t as u64), n, f, d, magnitude, t % 2 == 0);
            worst_case_ratio(&spec, &vs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let empirical = per_trial.into_iter().fold(0.0f64, f64::max);
    Ok(KappaEstimate {
        empirical_kappa: empirical,
        theoretical_kappa: theoretical,
        n,
        f,
        d,
        trials,
    })
}
