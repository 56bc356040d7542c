//! Run configuration: a TOML document with dotted keys (`model.kind`,
//! `noise.A`, ...), flattened and validated in one pass so that every
//! violation is reported together.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::limit::{check_method, ControlMethod};
use crate::noise::{psd_to_noise_model, solve_lyapunov, NoiseModel, PsdComponent};
use crate::sim::{StabilityPolicy, StepperConfig};
use crate::systems::{FunctionalKind, SystemKind, SystemSpec};

pub const DEFAULT_EPS_GRID: [f64; 8] = [1.0, 0.75, 0.5, 0.25, 0.1, 0.05, 0.025, 0.01];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Ou { a: f64, k: f64 },
    Langevin { mu: f64, gamma: f64, k: f64 },
    Psd { components: Vec<PsdComponent> },
}

impl NoiseSpec {
    pub fn build(&self) -> crate::Result<NoiseModel> {
        match self {
            NoiseSpec::Ou { a, k } => NoiseModel::ou(*a, *k),
            NoiseSpec::Langevin { mu, gamma, k } => NoiseModel::langevin(*mu, *gamma, *k),
            NoiseSpec::Psd { components } => psd_to_noise_model(components),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub noise: NoiseSpec,
    pub dt: f64,
    pub t_end: f64,
    pub n_samples: usize,
    pub eps_grid: Vec<f64>,
    pub seed: u64,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub control_method: Option<ControlMethod>,
    pub n_ref: usize,
    pub output: String,
    pub stability_policy: StabilityPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemSpec::new(SystemKind::LinearTimedep),
            noise: NoiseSpec::Ou { a: 1.0, k: 1.0 },
            dt: 1e-4,
            t_end: 1.0,
            n_samples: 100_000,
            eps_grid: DEFAULT_EPS_GRID.to_vec(),
            seed: 1,
            workers: None,
            control_method: None,
            n_ref: 1_000_000,
            output: "sweep.csv".into(),
            stability_policy: StabilityPolicy::Warn,
        }
    }
}

impl RunConfig {
    pub fn stepper(&self) -> StepperConfig {
        StepperConfig {
            stability_policy: self.stability_policy,
            ..StepperConfig::new(self.dt, self.t_end)
        }
    }
}

/// Everything wrong with a configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.problems.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            _ => {
                out.insert(key, v.clone());
            }
        }
    }
}

/// Typed access to the flattened key set, recording problems as it goes.
struct Reader {
    keys: BTreeMap<String, Value>,
    problems: Vec<String>,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.keys.remove(key)
    }

    fn bad(&mut self, key: &str, msg: impl fmt::Display) {
        self.problems.push(format!("{key}: {msg}"));
    }

    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    fn float(&mut self, key: &str, default: f64) -> f64 {
        match self.take(key) {
            None => default,
            Some(v) => Self::number(&v).unwrap_or_else(|| {
                self.bad(key, "expected a number");
                default
            }),
        }
    }

    fn count(&mut self, key: &str, default: u64) -> u64 {
        match self.take(key) {
            None => default,
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(Value::Float(f)) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => {
                f as u64
            }
            Some(_) => {
                self.bad(key, "expected a non-negative integer");
                default
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.take(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.bad(key, "expected a string");
                None
            }
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.take(key) {
            None => None,
            Some(Value::Array(a)) => {
                let v: Option<Vec<f64>> = a.iter().map(Self::number).collect();
                if v.is_none() {
                    self.bad(key, "expected an array of numbers");
                }
                v
            }
            Some(v) => match Self::number(&v) {
                Some(x) => Some(vec![x]),
                None => {
                    self.bad(key, "expected a number or an array of numbers");
                    None
                }
            },
        }
    }

    fn pair(&mut self, key: &str, default: [f64; 2]) -> [f64; 2] {
        match self.floats(key) {
            None => default,
            Some(v) if v.len() == 2 => [v[0], v[1]],
            Some(_) => {
                self.bad(key, "expected two numbers");
                default
            }
        }
    }
}

fn components(r: &mut Reader) -> Vec<PsdComponent> {
    let key = "noise.components";
    let Some(v) = r.take(key) else {
        r.bad(key, "required when noise.kind = \"psd\"");
        return Vec::new();
    };
    let Value::Array(items) = v else {
        r.bad(key, "expected an array of components");
        return Vec::new();
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let parsed = match item {
            Value::Array(a) if a.len() == 3 => {
                let n: Option<Vec<f64>> = a.iter().map(Reader::number).collect();
                n.map(|n| PsdComponent {
                    sigma: n[0],
                    bandwidth: n[1],
                    center: n[2],
                })
            }
            Value::Table(t) => {
                let get = |k: &str| t.get(k).and_then(Reader::number);
                let unknown = t
                    .keys()
                    .any(|k| !matches!(k.as_str(), "sigma" | "bandwidth" | "center"));
                match (get("sigma"), get("bandwidth"), unknown) {
                    (Some(sigma), Some(bandwidth), false) => Some(PsdComponent {
                        sigma,
                        bandwidth,
                        center: get("center").unwrap_or(0.0),
                    }),
                    _ => None,
                }
            }
            _ => None,
        };
        match parsed {
            Some(c) => out.push(c),
            None => r.bad(
                &format!("{key}[{i}]"),
                "expected [sigma, bandwidth, center] or {sigma, bandwidth, center}",
            ),
        }
    }
    out
}

/// Parses and validates a configuration document. An empty document gives
/// the defaults: linear oscillator, OU noise with `A = K = 1`, `dt = 1e-4`,
/// `T = 1`, `10⁵` samples.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
        problems: vec![format!("parse error: {}", e.to_string().trim_end())],
    })?;
    let mut keys = BTreeMap::new();
    flatten("", &table, &mut keys);
    let mut r = Reader {
        keys,
        problems: Vec::new(),
    };
    let mut cfg = RunConfig::default();

    let kind = match r.string("model.kind") {
        None => SystemKind::LinearTimedep,
        Some(s) => SystemKind::parse(&s).unwrap_or_else(|| {
            let names: Vec<_> = SystemKind::ALL.iter().map(|k| k.name()).collect();
            r.bad(
                "model.kind",
                format!("unknown model `{s}` (expected one of {})", names.join(", ")),
            );
            SystemKind::LinearTimedep
        }),
    };
    let mut system = SystemSpec::new(kind);
    if let Some(s) = r.string("model.functional") {
        match FunctionalKind::parse(&s).or_else(|| FunctionalKind::parse(&format!("terminal_{s}")))
        {
            Some(f) => system.functional.kind = f,
            None => r.bad("model.functional", format!("unknown functional `{s}`")),
        }
    }
    let p = &mut system.params;
    p.p = r.pair("model.p", p.p);
    p.q = r.pair("model.q", p.q);
    p.nu = r.float("model.nu", p.nu);
    p.c_f = r.float("model.c_f", p.c_f);
    p.c_ep = r.float("model.c_ep", p.c_ep);
    p.p_o = r.float("model.p_o", p.p_o);
    p.restitution = r.float("model.restitution", p.restitution);
    p.stiffness = r.float("model.stiffness", p.stiffness);
    p.damping = r.float("model.damping", p.damping);
    system.functional.band = r.float("model.band", system.functional.band);
    system.z0 = r.float("model.z0", system.z0);
    if let Some(x0) = r.floats("model.x0") {
        if x0.len() == kind.state_dim() {
            system.x0[..x0.len()].copy_from_slice(&x0);
        } else {
            r.bad(
                "model.x0",
                format!("{} expects {} entries", kind.name(), kind.state_dim()),
            );
        }
    }

    let noise_kind = r.string("noise.kind").unwrap_or_else(|| "ou".into());
    cfg.noise = match noise_kind.as_str() {
        "ou" => NoiseSpec::Ou {
            a: r.float("noise.A", 1.0),
            k: r.float("noise.K", 1.0),
        },
        "langevin" => NoiseSpec::Langevin {
            mu: r.float("noise.mu", 1.0),
            gamma: r.float("noise.gamma", 1.0),
            k: r.float("noise.K", 1.0),
        },
        "psd" => NoiseSpec::Psd {
            components: components(&mut r),
        },
        other => {
            r.bad(
                "noise.kind",
                format!("unknown noise `{other}` (expected ou, langevin or psd)"),
            );
            cfg.noise.clone()
        }
    };

    cfg.dt = r.float("dt", cfg.dt);
    cfg.t_end = r.float("T", cfg.t_end);
    cfg.n_samples = r.count("n_samples", cfg.n_samples as u64) as usize;
    if let Some(g) = r.floats("eps_grid") {
        cfg.eps_grid = g;
    }
    cfg.seed = r.count("seed", cfg.seed);
    if r.keys.contains_key("workers") {
        cfg.workers = Some(r.count("workers", 1) as usize);
    }
    if let Some(m) = r.string("control.method") {
        match ControlMethod::parse(&m) {
            Some(m) => cfg.control_method = Some(m),
            None => r.bad("control.method", format!("unknown method `{m}`")),
        }
    }
    cfg.n_ref = r.count("control.n_ref", cfg.n_ref as u64) as usize;
    if let Some(o) = r.string("output") {
        cfg.output = o;
    }
    if let Some(s) = r.string("stability_policy") {
        match s.as_str() {
            "warn" => cfg.stability_policy = StabilityPolicy::Warn,
            "reject" => cfg.stability_policy = StabilityPolicy::Reject,
            _ => r.bad("stability_policy", "expected \"warn\" or \"reject\""),
        }
    }
    cfg.system = system;

    let leftover: Vec<String> = r.keys.keys().cloned().collect();
    for k in leftover {
        r.bad(&k, "unknown key");
    }
    validate(&cfg, &mut r.problems);
    if r.problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError {
            problems: r.problems,
        })
    }
}

fn validate(cfg: &RunConfig, problems: &mut Vec<String>) {
    let mut bad = |key: &str, msg: String| problems.push(format!("{key}: {msg}"));
    if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
        bad("dt", "must be positive".into());
    }
    if !(cfg.t_end > 0.0 && cfg.t_end.is_finite()) {
        bad("T", "must be positive".into());
    } else if cfg.dt > 0.0 {
        if let Err(e) = cfg.stepper().n_steps() {
            bad("T", e.to_string());
        }
    }
    if cfg.n_samples < 2 {
        bad("n_samples", "must be at least 2".into());
    }
    if cfg.eps_grid.is_empty() {
        bad("eps_grid", "must not be empty".into());
    } else if cfg.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        bad("eps_grid", "entries must be positive".into());
    } else if cfg.eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        bad("eps_grid", "must be strictly decreasing".into());
    }
    if cfg.workers == Some(0) {
        bad("workers", "must be at least 1".into());
    }
    if cfg.n_ref < 10_000 {
        bad("control.n_ref", "must be at least 10000".into());
    }
    if cfg.output.is_empty() {
        bad("output", "must not be empty".into());
    }
    if let Err(e) = cfg.system.validate() {
        match e {
            crate::Error::InvalidParameter { name, reason } => bad(&name, reason),
            e => bad("model", e.to_string()),
        }
    }
    match cfg.noise.build() {
        Ok(m) => {
            if let Err(e) = solve_lyapunov(&m) {
                bad("noise", e.to_string());
            }
        }
        Err(crate::Error::InvalidParameter { name, reason }) => bad(&name, reason),
        Err(e) => bad("noise", e.to_string()),
    }
    if let Some(m) = cfg.control_method {
        if let Err(e) = check_method(&cfg.system, m) {
            bad("control.method", e.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.noise, NoiseSpec::Ou { a: 1.0, k: 1.0 });
        assert_eq!((cfg.dt, cfg.t_end, cfg.n_samples), (1e-4, 1.0, 100_000));
    }

    #[test]
    fn zero_dt_names_the_key() {
        let err = parse_config("dt = 0").unwrap_err();
        assert!(err.problems.iter().any(|p| p.starts_with("dt:")), "{err}");
    }

    #[test]
    fn indicator_experiment_is_valid() {
        let cfg =
            parse_config("model.kind = \"van_der_pol\"\nmodel.functional = \"indicator_band\"\n")
                .unwrap();
        assert_eq!(cfg.system.kind, SystemKind::VanDerPol);
        assert_eq!(
            cfg.system.functional.kind,
            FunctionalKind::TerminalIndicatorBand
        );
    }

    #[test]
    fn dotted_tables_and_sections_are_equivalent() {
        let a = parse_config("noise.kind = \"langevin\"\nnoise.mu = 2.0\nnoise.K = 3").unwrap();
        let b = parse_config("[noise]\nkind = \"langevin\"\nmu = 2.0\nK = 3.0\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.noise,
            NoiseSpec::Langevin {
                mu: 2.0,
                gamma: 1.0,
                k: 3.0
            }
        );
    }

    #[test]
    fn psd_components_parse_in_both_forms() {
        let cfg = parse_config(
            "noise.kind = \"psd\"\nnoise.components = [[1.0, 2.0, 0.0], {sigma = 0.5, bandwidth = 0.3, center = 4.0}]",
        )
        .unwrap();
        let NoiseSpec::Psd { components } = cfg.noise else {
            panic!()
        };
        assert_eq!(components.len(), 2);
        assert_eq!(components[1].center, 4.0);
    }

    #[test]
    fn all_problems_are_collected() {
        let err = parse_config(
            "dt = -1\nn_samples = 1\neps_grid = [0.1, 0.2]\nmodel.kind = \"pendulum\"\nbogus = 3\nnoise.A = -1\n",
        )
        .unwrap_err();
        for key in [
            "dt:",
            "n_samples:",
            "eps_grid:",
            "model.kind:",
            "bogus:",
            "noise",
        ] {
            assert!(
                err.problems.iter().any(|p| p.starts_with(key)),
                "missing {key} in {err}"
            );
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_config("dt = = 1").unwrap_err();
        assert!(err.problems[0].contains("line 1"), "{err}");
    }

    #[test]
    fn incompatible_choices_are_rejected() {
        assert!(parse_config(
            "model.kind = \"friction\"\nmodel.functional = \"boundary_indicator\""
        )
        .is_err());
        assert!(parse_config("control.method = \"closed_form\"").is_err());
        assert!(parse_config("model.kind = \"friction\"\nmodel.x0 = [1.0, 2.0]").is_err());
        assert!(parse_config("T = 1.00005\ndt = 0.0001").is_err());
    }

    #[test]
    fn model_parameters_are_read() {
        let cfg = parse_config(
            "model.kind = \"impact\"\nmodel.restitution = 0.5\nmodel.x0 = [0.1, -1]\nmodel.p_o = 0.3\nworkers = 2\nseed = 9",
        )
        .unwrap();
        assert_eq!(cfg.system.params.restitution, 0.5);
        assert_eq!(cfg.system.x0, [0.1, -1.0]);
        assert_eq!(cfg.workers, Some(2));
        assert_eq!(cfg.seed, 9);
    }
}
