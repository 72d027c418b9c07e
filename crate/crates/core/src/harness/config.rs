use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::aggregation::AggregatorSpec;
use crate::attacks::{AttackKind, AttackSpec};
use crate::error::{Error, Result};
use crate::mean_estimation::{GaussianPopulation, ReportedClients};
use crate::pgd::{PgdConfig, StepSize, DEFAULT_THETA_RADIUS};
use crate::tasks::LogisticParams;

const PRESETS: &[(&str, &str)] = &[
    ("fig1-defaults", include_str!("../../presets/fig1-defaults.toml")),
    ("fig1-desk", include_str!("../../presets/fig1-desk.toml")),
    ("fig2-desk", include_str!("../../presets/fig2-desk.toml")),
];

/// Keys that describe the λ grid; giving one in a file overrides the other from a preset.
const LAMBDA_KEYS: [&str; 2] = ["lambdas", "lambda_step"];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    MeanEst,
    Classify,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::MeanEst => "mean_est",
            Experiment::Classify => "classify",
        })
    }
}

/// Step size as written in a config: a positive number or `"auto"` for `1/(2L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eta(pub StepSize);

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(x) => s.serialize_f64(x),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if s == "auto" => Ok(Eta(StepSize::Auto)),
            Value::Number(n) => Ok(Eta(StepSize::Fixed(n.as_f64().unwrap_or(f64::NAN)))),
            other => Err(serde::de::Error::custom(format!(
                "expected a positive number or \"auto\", got {other}"
            ))),
        }
    }
}

/// Dirichlet concentration: a positive number or `"inf"` for balanced classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alpha(pub Option<f64>);

impl Alpha {
    pub fn as_f64(&self) -> f64 {
        self.0.unwrap_or(f64::INFINITY)
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            None => s.serialize_str("inf"),
            Some(a) => s.serialize_f64(a),
        }
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => Ok(Alpha(None)),
            Value::Number(n) => Ok(Alpha(Some(n.as_f64().unwrap_or(f64::NAN)))),
            other => Err(serde::de::Error::custom(format!(
                "expected a positive number or \"inf\", got {other}"
            ))),
        }
    }
}

fn default_n() -> usize {
    600
}
fn default_f() -> usize {
    100
}
fn default_m() -> usize {
    20
}
fn default_one() -> usize {
    1
}
fn default_sigma() -> f64 {
    15.0
}
fn default_sigma_h() -> f64 {
    2.0
}
fn default_base_mean() -> f64 {
    10.0
}
fn default_alpha() -> Alpha {
    Alpha(None)
}
fn default_class_sep() -> f64 {
    2.0
}
fn default_ridge() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_aggregator() -> String {
    "nnm_trimmed_mean".into()
}
fn default_attack() -> String {
    "sign_flip".into()
}
fn default_unit() -> f64 {
    1.0
}
fn default_foe_grid() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
}
fn default_iterations() -> usize {
    500
}
fn default_eta() -> Eta {
    Eta(StepSize::Auto)
}
fn default_radius() -> f64 {
    DEFAULT_THETA_RADIUS
}
fn default_trials() -> usize {
    20
}
fn default_delta() -> f64 {
    0.05
}

/// A fully resolved experiment description.
///
/// Every key except `experiment` has a default; unknown keys are rejected.
/// A `preset` key names one of the bundled scenarios, whose values apply
/// wherever the file is silent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_f")]
    pub f: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_one")]
    pub d: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_sigma_h")]
    pub sigma_h: f64,
    #[serde(default = "default_base_mean")]
    pub base_mean: f64,
    #[serde(default)]
    pub clients: ReportedClients,
    #[serde(default = "default_alpha")]
    pub alpha: Alpha,
    #[serde(default = "default_class_sep")]
    pub class_sep: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_aggregator")]
    pub aggregator: String,
    #[serde(default = "default_attack")]
    pub attack: String,
    #[serde(default = "default_unit")]
    pub tau: f64,
    #[serde(default = "default_unit")]
    pub epsilon: f64,
    #[serde(default = "default_foe_grid")]
    pub foe_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_step: Option<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_eta")]
    pub eta: Eta,
    #[serde(default = "default_radius")]
    pub theta_radius: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Grid of overrides; every combination becomes one run.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vary: BTreeMap<String, Vec<Value>>,
}

fn config_err(path: impl Into<String>, message: impl fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

fn toml_to_json(v: toml::Value) -> Value {
    match v {
        toml::Value::String(s) => Value::String(s),
        toml::Value::Integer(i) => Value::from(i),
        toml::Value::Float(x) if x.is_finite() => Value::from(x),
        toml::Value::Float(x) if x.is_nan() => Value::String("nan".into()),
        toml::Value::Float(x) => Value::String(if x > 0.0 { "inf" } else { "-inf" }.into()),
        toml::Value::Boolean(b) => Value::Bool(b),
        toml::Value::Datetime(d) => Value::String(d.to_string()),
        toml::Value::Array(a) => Value::Array(a.into_iter().map(toml_to_json).collect()),
        toml::Value::Table(t) => Value::Object(t.into_iter().map(|(k, v)| (k, toml_to_json(v))).collect()),
    }
}

fn parse_document(text: &str, json: bool, origin: &str) -> Result<Map<String, Value>> {
    let value = if json {
        serde_json::from_str::<Value>(text).map_err(|e| config_err(origin, e))?
    } else {
        toml_to_json(toml::from_str::<toml::Value>(text).map_err(|e| config_err(origin, e))?)
    };
    match value {
        Value::Object(map) => Ok(map),
        _ => Err(config_err(origin, "top level must be a table of keys")),
    }
}

pub fn preset(name: &str) -> Result<Map<String, Value>> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
        let known: Vec<_> = preset_names().collect();
        config_err("preset", format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })?;
    let mut map = parse_document(text, false, name)?;
    map.insert("preset".into(), Value::String(name.into()));
    Ok(map)
}

/// Overlays `doc` on its preset (if any) and deserializes the result.
pub fn resolve(mut doc: Map<String, Value>) -> Result<ScenarioConfig> {
    let mut merged = match doc.get("preset") {
        Some(Value::String(name)) => preset(name)?,
        Some(other) => return Err(config_err("preset", format!("expected a name, got {other}"))),
        None => Map::new(),
    };
    if LAMBDA_KEYS.iter().any(|k| doc.contains_key(*k)) {
        for k in LAMBDA_KEYS {
            merged.remove(k);
        }
    }
    merged.append(&mut doc);
    let cfg = from_document(Value::Object(merged), "")?;
    cfg.validate()?;
    Ok(cfg)
}

fn from_document(doc: Value, prefix: &str) -> Result<ScenarioConfig> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let message = inner.to_string();
        // Unknown and missing fields are reported against the parent table.
        let key = if path == "." { field_of(&message) } else { path };
        config_err(format!("{prefix}{key}"), message)
    })
}

/// Best-effort key name from a serde message such as "unknown field `x`".
fn field_of(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_owned)
        .unwrap_or_else(|| "<root>".into())
}

/// Reads a JSON (`.json`) or TOML (anything else) scenario file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    resolve(parse_document(&text, json, &path.display().to_string())?)
}

impl FromStr for ScenarioConfig {
    type Err = Error;

    /// Parses TOML text (JSON objects are valid TOML-free input only via [`load_config`]).
    fn from_str(s: &str) -> Result<Self> {
        resolve(parse_document(s, false, "<inline>")?)
    }
}

/// One point of the `vary` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    /// `key=value` pairs joined by `,`; `"base"` when nothing varies.
    pub run_id: String,
    pub config: ScenarioConfig,
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl ScenarioConfig {
    pub fn lambda_grid(&self) -> Result<Vec<f64>> {
        match (&self.lambdas, self.lambda_step) {
            (Some(_), Some(_)) => Err(config_err("lambdas", "give either `lambdas` or `lambda_step`, not both")),
            (Some(ls), None) => {
                if ls.is_empty() {
                    return Err(config_err("lambdas", "grid is empty"));
                }
                if let Some(bad) = ls.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                    return Err(config_err("lambdas", format!("{bad} is outside [0, 1]")));
                }
                Ok(ls.clone())
            }
            (None, step) => {
                let step = step.unwrap_or(0.05);
                let count = (1.0 / step).round();
                if !(step > 0.0 && step <= 1.0) || ((1.0 / step) - count).abs() > 1e-9 {
                    return Err(config_err("lambda_step", format!("{step} must divide 1 evenly")));
                }
                let count = count as usize;
                Ok((0..=count).map(|k| k as f64 / count as f64).collect())
            }
        }
    }

    pub fn aggregator_spec(&self) -> Result<AggregatorSpec> {
        let spec: AggregatorSpec = self.aggregator.parse().map_err(|e| config_err("aggregator", e))?;
        Ok(spec.with_f(self.f))
    }

    pub fn attack_spec(&self) -> Result<AttackSpec> {
        let kind = match self.attack.as_str() {
            "none" => AttackKind::None,
            "sign_flip" => AttackKind::SignFlip { tau: self.tau },
            "foe" => AttackKind::Foe { epsilon: self.epsilon },
            "auto_foe" => AttackKind::AutoFoe {
                grid: self.foe_grid.clone(),
            },
            other => {
                return Err(config_err(
                    "attack",
                    format!("unknown attack `{other}` (expected none, sign_flip, foe or auto_foe)"),
                ))
            }
        };
        kind.validate().map_err(|e| config_err("attack", e))?;
        Ok(AttackSpec::new(kind, self.f))
    }

    pub fn population(&self) -> GaussianPopulation {
        GaussianPopulation {
            n: self.n,
            f: self.f,
            m: self.m,
            d: self.d,
            sigma: self.sigma,
            sigma_h: self.sigma_h,
            base_mean: self.base_mean,
        }
    }

    pub fn logistic_params(&self) -> LogisticParams {
        LogisticParams {
            n: self.n,
            f: self.f,
            m: self.m,
            d: self.d,
            alpha: self.alpha.0,
            class_sep_norm: self.class_sep,
            ridge: self.ridge,
            intercept: self.intercept,
        }
    }

    pub fn pgd_template(&self) -> Result<PgdConfig> {
        let mut cfg = PgdConfig::new(0.0, self.iterations, self.aggregator_spec()?, self.attack_spec()?);
        cfg.eta = self.eta.0;
        cfg.theta_radius = self.theta_radius;
        Ok(cfg)
    }

    fn validate_point(&self) -> Result<()> {
        if 2 * self.f >= self.n {
            return Err(config_err("f", format!("require f < n/2, got n={}, f={}", self.n, self.f)));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        self.lambda_grid()?;
        self.aggregator_spec()?;
        self.attack_spec()?;
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_err("delta", "must lie in (0, 1)"));
        }
        let lift = |e: Error| match e {
            Error::InvalidParameter { name, reason } => config_err(name, reason),
            other => other,
        };
        match self.experiment {
            Experiment::MeanEst => self.population().validate().map_err(lift),
            Experiment::Classify => {
                if self.m < 2 {
                    return Err(config_err("m", "must be at least 2"));
                }
                if self.d == 0 {
                    return Err(config_err("d", "must be at least 1"));
                }
                if let Some(a) = self.alpha.0 {
                    if !(a > 0.0) || !a.is_finite() {
                        return Err(config_err("alpha", format!("must be positive or \"inf\", got {a}")));
                    }
                }
                if !(self.class_sep >= 0.0) || !self.class_sep.is_finite() {
                    return Err(config_err("class_sep", "must be nonnegative"));
                }
                if !(self.ridge > 0.0) || !self.ridge.is_finite() {
                    return Err(config_err("ridge", "must be positive"));
                }
                self.pgd_template()?.validate().map_err(lift)
            }
        }
    }

    /// Checks the base point and every grid cell.
    pub fn validate(&self) -> Result<()> {
        if self.vary.is_empty() {
            return self.validate_point();
        }
        self.cells().map(|_| ())
    }

    /// Expands `vary` into its cartesian product, keys in sorted order and
    /// values in listed order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.vary.is_empty() {
            return Ok(vec![Cell {
                run_id: "base".into(),
                config: self.clone(),
            }]);
        }
        for (key, values) in &self.vary {
            if values.is_empty() {
                return Err(config_err(format!("vary.{key}"), "needs at least one value"));
            }
            if key == "vary" || key == "preset" {
                return Err(config_err(format!("vary.{key}"), "cannot be varied"));
            }
        }
        let mut base = serde_json::to_value(self)?;
        base.as_object_mut().expect("config serializes to a map").remove("vary");
        let mut cells = vec![(Vec::<String>::new(), base)];
        for (key, values) in &self.vary {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for (labels, doc) in &cells {
                for v in values {
                    let mut doc = doc.clone();
                    let map = doc.as_object_mut().expect("map");
                    if LAMBDA_KEYS.contains(&key.as_str()) {
                        for k in LAMBDA_KEYS {
                            map.remove(k);
                        }
                    }
                    map.insert(key.clone(), v.clone());
                    let mut labels = labels.clone();
                    labels.push(format!("{key}={}", render(v)));
                    next.push((labels, doc));
                }
            }
            cells = next;
        }
        cells
            .into_iter()
            .map(|(labels, doc)| {
                let run_id = labels.join(",");
                let config = from_document(doc, &format!("vary[{run_id}]."))?;
                config.validate_point().map_err(|e| match e {
                    Error::Config { path, message } => config_err(format!("vary[{run_id}].{path}"), message),
                    other => other,
                })?;
                Ok(Cell { run_id, config })
            })
            .collect()
    }

    /// Adds `key = values` to the grid after checking the key exists.
    pub fn with_vary(&self, key: &str, values: Vec<Value>) -> Result<Self> {
        let probe = serde_json::to_value(self)?;
        let known = probe.as_object().expect("map").contains_key(key) || LAMBDA_KEYS.contains(&key);
        if !known && !matches!(key, "output_dir") {
            return Err(config_err(key, "unknown key"));
        }
        let mut cfg = self.clone();
        cfg.vary.insert(key.to_owned(), values);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses a `--vary` value list: numbers and booleans as JSON, anything else as a string.
pub fn parse_vary_values(list: &str) -> Vec<Value> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_str::<Value>(s).unwrap_or_else(|_| Value::String(s.to_owned())))
        .collect()
}
