//! Flat `key = value` scenario files.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Units are months throughout (`tau` in months, `kd` in 1/month).

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use agesis::kernels::GammaKernel;
use agesis::model::{reproduction_number, InfectivityProfile, Param, Scenario};
use agesis::pseudospectral::DEFAULT_DEGREE;
use agesis::reductions::{Method, Reduction};

const KEYS: &[&str] = &[
    "tau", "shape_j", "kd", "r0", "beta0", "method", "d", "rho", "t_end", "dt", "rel_tol", "abs_tol", "i0",
    "sweep", "range", "steps", "grid", "grid_range", "grid_steps", "criticality", "output",
];

/// A rejected config, with the offending key when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(key: &str, reason: impl fmt::Display) -> ConfigError {
    ConfigError(format!("`{key}`: {reason}"))
}

/// Simulation horizon: fixed, or derived from the leading eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    Auto,
}

/// A swept parameter with its range and number of steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub param: Param,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl Sweep {
    /// `steps + 1` evenly spaced values from `from` to `to`.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| {
                let t = k as f64 / self.steps as f64;
                (1.0 - t) * self.from + t * self.to
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// Set when the file gave `beta0` instead of `r0`.
    pub beta0: Option<f64>,
    pub method: Method,
    pub degree: usize,
    pub rho: Option<f64>,
    pub horizon: Horizon,
    /// Output spacing of trajectories; defaults to `tau/20`.
    pub dt: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub i0: Vec<f64>,
    pub sweep: Option<Sweep>,
    pub grid: Option<Sweep>,
    pub criticality: bool,
    pub output: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn reduction(&self) -> Reduction {
        match self.method {
            Method::Erlang => Reduction::Erlang,
            Method::Hypoexp => Reduction::Hypoexp,
            Method::Pseudospectral => Reduction::Pseudospectral { degree: self.degree, rho: self.rho },
        }
    }

    pub fn sweep(&self) -> Result<Sweep, ConfigError> {
        self.sweep.ok_or_else(|| err("sweep", "required by this command"))
    }

    pub fn grid(&self) -> Result<Sweep, ConfigError> {
        self.grid.ok_or_else(|| err("grid", "required by this command"))
    }
}

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key).map(|(_, v)| v)
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|v| parse_number(key, &v)).transpose()
    }

    fn positive(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.number(key)? {
            Some(x) if !(x > 0.0) => Err(err(key, format!("must be positive, got {x}"))),
            other => Ok(other),
        }
    }

    fn required(&mut self, key: &str) -> Result<f64, ConfigError> {
        self.positive(key)?.ok_or_else(|| err(key, "missing"))
    }

    fn count(&mut self, key: &str, min: usize) -> Result<Option<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => match v.parse::<usize>() {
                Ok(n) if n >= min => Ok(Some(n)),
                _ => Err(err(key, format!("expected an integer of at least {min}, got `{v}`"))),
            },
        }
    }

    fn pair(&mut self, key: &str) -> Result<Option<(f64, f64)>, ConfigError> {
        let Some(v) = self.take(key) else { return Ok(None) };
        let xs = parse_list(key, &v)?;
        match xs[..] {
            [a, b] if a != b => Ok(Some((a, b))),
            _ => Err(err(key, format!("expected two distinct numbers `from, to`, got `{v}`"))),
        }
    }

    fn sweep(&mut self, param_key: &str, range_key: &str, steps_key: &str) -> Result<Option<Sweep>, ConfigError> {
        let param = self.take(param_key);
        let range = self.pair(range_key)?;
        let steps = self.count(steps_key, 1)?;
        let Some(name) = param else {
            return match (range, steps) {
                (None, None) => Ok(None),
                _ => Err(err(param_key, format!("missing, but `{range_key}` or `{steps_key}` is set"))),
            };
        };
        let param = name.parse::<Param>().map_err(|_| {
            err(param_key, format!("unknown parameter `{name}`; expected tau, shape_j, kd or r0"))
        })?;
        let (from, to) = range.ok_or_else(|| err(range_key, format!("missing for `{param_key} = {name}`")))?;
        Ok(Some(Sweep { param, from, to, steps: steps.unwrap_or(50) }))
    }
}

fn parse_number(key: &str, v: &str) -> Result<f64, ConfigError> {
    match v.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(err(key, format!("expected a finite number, got `{v}`"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| parse_number(key, s)).collect()
}

/// Parses and validates a config file's text.
pub fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!("line {}: expected `key = value`, got `{line}`", n + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(ConfigError(format!("line {}: unknown key `{key}`", n + 1)));
        }
        if value.is_empty() {
            return Err(ConfigError(format!("line {}: `{key}` has no value", n + 1)));
        }
        if let Some((first, _)) = map.insert(key.to_string(), (n + 1, value.to_string())) {
            return Err(ConfigError(format!("line {}: `{key}` already set on line {first}", n + 1)));
        }
    }
    let mut e = Entries(map);

    let tau = e.required("tau")?;
    let shape = e.required("shape_j")?;
    let kd = match e.number("kd")? {
        Some(x) if x < 0.0 => return Err(err("kd", format!("must be non-negative, got {x}"))),
        other => other.unwrap_or(0.0),
    };
    let (r0, beta0) = match (e.positive("r0")?, e.positive("beta0")?) {
        (Some(r0), None) => (r0, None),
        (None, Some(beta0)) => {
            let kernel = GammaKernel::from_mean_shape(tau, shape).map_err(|x| ConfigError(x.to_string()))?;
            let inf = InfectivityProfile::new(beta0, kd).map_err(|x| ConfigError(x.to_string()))?;
            (reproduction_number(&kernel, &inf), Some(beta0))
        }
        (Some(_), Some(_)) => return Err(ConfigError("give exactly one of `r0` and `beta0`, not both".into())),
        (None, None) => return Err(ConfigError("one of `r0` and `beta0` is required".into())),
    };

    let method = match e.take("method") {
        None => Method::Pseudospectral,
        Some(m) => m
            .parse::<Method>()
            .map_err(|_| err("method", format!("unknown method `{m}`; expected erlang, hypoexp or pseudospectral")))?,
    };
    if method == Method::Hypoexp && shape <= 1.0 {
        return Err(err("method", format!("hypoexp needs shape_j > 1, got {shape}")));
    }
    let degree = e.count("d", 2)?.unwrap_or(DEFAULT_DEGREE);
    let rho = e.positive("rho")?;

    let horizon = match e.take("t_end") {
        None => Horizon::Fixed(50.0 * tau),
        Some(v) if v == "auto" => Horizon::Auto,
        Some(v) => match parse_number("t_end", &v)? {
            t if t > 0.0 => Horizon::Fixed(t),
            t => return Err(err("t_end", format!("must be positive or `auto`, got {t}"))),
        },
    };
    let dt = e.positive("dt")?.unwrap_or(tau / 20.0);
    let rel_tol = e.positive("rel_tol")?.unwrap_or(1e-8);
    let abs_tol = e.positive("abs_tol")?.unwrap_or(1e-10);

    let i0 = match e.take("i0") {
        None => vec![0.01],
        Some(v) => parse_list("i0", &v)?,
    };
    if let Some(bad) = i0.iter().find(|x| !(**x > 0.0 && **x <= 1.0)) {
        return Err(err("i0", format!("values must lie in (0, 1], got {bad}")));
    }

    let sweep = e.sweep("sweep", "range", "steps")?;
    let grid = e.sweep("grid", "grid_range", "grid_steps")?;
    if let (Some(s), Some(g)) = (sweep, grid) {
        if s.param == g.param {
            return Err(err("grid", "must differ from the `sweep` parameter"));
        }
    }
    let criticality = match e.take("criticality").as_deref() {
        None | Some("true") => true,
        Some("false") => false,
        Some(v) => return Err(err("criticality", format!("expected true or false, got `{v}`"))),
    };
    let output = e.take("output").map(PathBuf::from);

    Ok(ScenarioConfig {
        scenario: Scenario::new(tau, shape, kd, r0),
        beta0,
        method,
        degree,
        rho,
        horizon,
        dt,
        rel_tol,
        abs_tol,
        i0,
        sweep,
        grid,
        criticality,
        output,
    })
}
