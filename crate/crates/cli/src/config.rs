//! Run configuration: TOML in, fully resolved and validated struct out.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use homctl::coeff::{CoefficientKind, PeriodicCoefficient};
use homctl::pde::Sampling;

pub const DEFAULT_EPS_LIST: [f64; 5] = [1.0 / 10.0, 1.0 / 20.0, 1.0 / 30.0, 1.0 / 40.0, 1.0 / 60.0];

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(String),
    /// Every violation found, as `field.path: message`.
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            ConfigError::Parse(msg) => write!(f, "parse error: {msg}"),
            ConfigError::Invalid(list) => {
                writeln!(f, "invalid configuration ({} problems):", list.len())?;
                for v in list {
                    writeln!(f, "  {v}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: Option<RawSystem>,
    #[serde(default)]
    discretization: RawDiscretization,
    #[serde(default)]
    control: RawControl,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    spectrum: RawSpectrum,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    n: Option<i64>,
    m: Option<i64>,
    #[serde(rename = "A")]
    a: Option<Vec<f64>>,
    #[serde(rename = "B")]
    b: Option<Vec<f64>>,
    coefficient: Option<RawCoefficient>,
    epsilon: Option<f64>,
    eps_list: Option<Vec<f64>>,
    omega: Option<Vec<f64>>,
    #[serde(rename = "T")]
    horizon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoefficient {
    kind: String,
    #[serde(default)]
    params: Vec<f64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawDiscretization {
    #[serde(rename = "N")]
    points: Option<i64>,
    /// Integer step count or `"auto"`.
    #[serde(rename = "M")]
    steps: Option<toml::Value>,
    sampling: Option<String>,
    smoothing: Option<i64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawControl {
    method: Option<String>,
    eta: Option<f64>,
    #[serde(rename = "D_cutoff")]
    cutoff: Option<f64>,
    cg_tol: Option<f64>,
    max_iter: Option<i64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    component: Option<i64>,
    mode: Option<i64>,
    amplitude: Option<f64>,
    coordinates: Option<String>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    count: Option<i64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    out_dir: Option<PathBuf>,
    dump_trajectory: Option<bool>,
    snapshots: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hum,
    ThreeStage,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hum" => Some(Method::Hum),
            "three-stage" => Some(Method::ThreeStage),
            _ => None,
        }
    }
}

/// Coordinates of the initial state: original `y` or cascade `u = P⁻¹y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Original,
    Canonical,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemConfig {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub coefficient: PeriodicCoefficient,
    pub epsilon: f64,
    pub eps_list: Vec<f64>,
    pub omega: [f64; 2],
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscretizationConfig {
    #[serde(rename = "N")]
    pub points: usize,
    /// `None` is automatic (`Δt <= h`).
    #[serde(rename = "M")]
    pub steps: Option<usize>,
    pub sampling: Sampling,
    pub smoothing: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlConfig {
    pub method: Method,
    pub eta: f64,
    #[serde(rename = "D_cutoff")]
    pub cutoff: f64,
    pub cg_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialConfig {
    /// 1-based.
    pub component: usize,
    pub mode: usize,
    pub amplitude: f64,
    pub coordinates: Coordinates,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputConfig {
    pub out_dir: PathBuf,
    pub dump_trajectory: bool,
    pub snapshots: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub discretization: DiscretizationConfig,
    pub control: ControlConfig,
    pub initial: InitialConfig,
    pub spectrum_count: usize,
    pub output: OutputConfig,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    resolve(raw)
}

fn positive_count(v: Option<i64>, path: &str, default: usize, errors: &mut Vec<String>) -> usize {
    match v {
        None => default,
        Some(x) if x >= 1 => x as usize,
        Some(x) => {
            errors.push(format!("{path}: must be >= 1, got {x}"));
            default
        }
    }
}

fn coefficient(raw: Option<RawCoefficient>, errors: &mut Vec<String>) -> PeriodicCoefficient {
    let fallback = PeriodicCoefficient::constant(1.0).expect("unit coefficient");
    let Some(raw) = raw else {
        return fallback;
    };
    let kind = match raw.kind.as_str() {
        "constant" => CoefficientKind::Constant,
        "sin" => CoefficientKind::Sin,
        "reciprocal_sin" => CoefficientKind::ReciprocalSin,
        "fourier" => CoefficientKind::Fourier,
        other => {
            errors.push(format!(
                "system.coefficient.kind: unknown kind {other:?} (constant, sin, reciprocal_sin, fourier)"
            ));
            return fallback;
        }
    };
    match PeriodicCoefficient::new(kind, raw.params) {
        Ok(c) => c,
        Err(e) => {
            errors.push(format!("system.coefficient: {e}"));
            fallback
        }
    }
}

fn resolve(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let mut errors = Vec::new();
    let sys = match raw.system {
        Some(s) => s,
        None => {
            errors.push("system: missing section".into());
            RawSystem::default()
        }
    };

    let n = match sys.n {
        None => {
            errors.push("system.n: missing".into());
            1
        }
        Some(x) => positive_count(Some(x), "system.n", 1, &mut errors),
    };
    let a = sys.a.unwrap_or_else(|| {
        errors.push("system.A: missing".into());
        vec![0.0; n * n]
    });
    if a.len() != n * n {
        errors.push(format!(
            "system.A: expected n² = {} numbers (row-major), got {}",
            n * n,
            a.len()
        ));
    }
    let b = sys.b.unwrap_or_else(|| {
        errors.push("system.B: missing".into());
        vec![1.0; n]
    });
    let m = match sys.m {
        Some(_) => positive_count(sys.m, "system.m", 1, &mut errors),
        None if !b.is_empty() && b.len() % n == 0 => b.len() / n,
        None => 1,
    };
    if b.len() != n * m {
        errors.push(format!(
            "system.B: expected n·m = {} numbers (row-major), got {}",
            n * m,
            b.len()
        ));
    }
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        errors.push("system.A/B: entries must be finite".into());
    }
    let coefficient = coefficient(sys.coefficient, &mut errors);

    let eps_list = sys.eps_list.unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
    if eps_list.is_empty() {
        errors.push("system.eps_list: empty".into());
    }
    for (i, e) in eps_list.iter().enumerate() {
        if !(*e > 0.0 && *e <= 1.0) {
            errors.push(format!("system.eps_list[{i}]: {e} not in (0, 1]"));
        }
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        errors.push("system.eps_list: must be strictly decreasing".into());
    }
    let epsilon = sys.epsilon.unwrap_or_else(|| eps_list.first().copied().unwrap_or(0.1));
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        errors.push(format!("system.epsilon: {epsilon} not in (0, 1]"));
    }

    let omega = match sys.omega.as_deref() {
        None => {
            errors.push("system.omega: missing".into());
            [0.0, 1.0]
        }
        Some([l, r]) => {
            if !(*l >= 0.0 && *r <= 1.0) {
                errors.push(format!("system.omega: ({l}, {r}) must lie in [0, 1]"));
            }
            if !(l < r) {
                errors.push("system.omega: omega.left < omega.right required".into());
            }
            [*l, *r]
        }
        Some(other) => {
            errors.push(format!("system.omega: expected [left, right], got {} numbers", other.len()));
            [0.0, 1.0]
        }
    };
    let horizon = match sys.horizon {
        None => {
            errors.push("system.T: missing".into());
            1.0
        }
        Some(t) if t > 0.0 && t.is_finite() => t,
        Some(t) => {
            errors.push(format!("system.T: must be > 0, got {t}"));
            1.0
        }
    };

    // Grid: resolve the smallest ε that any command may use.
    let smallest = eps_list.iter().copied().fold(epsilon, f64::min).max(1e-6);
    let default_points = if coefficient.is_constant() {
        200
    } else {
        ((20.0 / smallest).ceil() as usize).saturating_sub(1).max(200)
    };
    let d = raw.discretization;
    let points = positive_count(d.points, "discretization.N", default_points, &mut errors);
    if points < 4 {
        errors.push(format!("discretization.N: need at least 4 interior points, got {points}"));
    }
    if !coefficient.is_constant() && (points as f64 + 1.0) < 20.0 / epsilon * (1.0 - 1e-12) {
        errors.push(format!(
            "discretization.N: {points} interior points do not resolve epsilon = {epsilon} (need N + 1 >= {:.0})",
            20.0 / epsilon
        ));
    }
    let h = 1.0 / (points as f64 + 1.0);
    let steps = match d.steps {
        None => None,
        Some(toml::Value::String(s)) if s == "auto" => None,
        Some(toml::Value::Integer(k)) if k >= 1 => {
            let dt = horizon / k as f64;
            if dt > h * (1.0 + 1e-12) {
                errors.push(format!("discretization.M: time step T/M = {dt:.3e} exceeds h = {h:.3e}"));
            }
            Some(k as usize)
        }
        Some(other) => {
            errors.push(format!("discretization.M: expected a positive integer or \"auto\", got {other}"));
            None
        }
    };
    let sampling = match d.sampling.as_deref() {
        None | Some("harmonic") => Sampling::Harmonic,
        Some("midpoint") => Sampling::Midpoint,
        Some(other) => {
            errors.push(format!("discretization.sampling: unknown {other:?} (harmonic, midpoint)"));
            Sampling::Harmonic
        }
    };
    let smoothing = match d.smoothing {
        None => homctl::pde::DEFAULT_SMOOTHING,
        Some(k) if k >= 0 => k as usize,
        Some(k) => {
            errors.push(format!("discretization.smoothing: must be >= 0, got {k}"));
            homctl::pde::DEFAULT_SMOOTHING
        }
    };

    let c = raw.control;
    let method = match c.method.as_deref() {
        None => Method::Hum,
        Some(s) => Method::parse(s).unwrap_or_else(|| {
            errors.push(format!("control.method: unknown {s:?} (hum, three-stage)"));
            Method::Hum
        }),
    };
    let eta = c.eta.unwrap_or(h * h);
    if !(eta > 0.0 && eta.is_finite()) {
        errors.push(format!("control.eta: must be > 0, got {eta}"));
    }
    let cutoff = c.cutoff.unwrap_or(1.0);
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        errors.push(format!("control.D_cutoff: must be > 0, got {cutoff}"));
    }
    let cg_tol = c.cg_tol.unwrap_or(1e-10);
    if !(cg_tol > 0.0 && cg_tol < 1.0) {
        errors.push(format!("control.cg_tol: must lie in (0, 1), got {cg_tol}"));
    }
    let max_iter = positive_count(c.max_iter, "control.max_iter", 2000, &mut errors);

    let i = raw.initial;
    let component = positive_count(i.component, "initial.component", 1, &mut errors);
    if component > n {
        errors.push(format!("initial.component: {component} exceeds n = {n}"));
    }
    let mode = positive_count(i.mode, "initial.mode", 1, &mut errors);
    let amplitude = i.amplitude.unwrap_or(1.0);
    if !amplitude.is_finite() {
        errors.push("initial.amplitude: must be finite".into());
    }
    let coordinates = match i.coordinates.as_deref() {
        None | Some("canonical") => Coordinates::Canonical,
        Some("original") => Coordinates::Original,
        Some(other) => {
            errors.push(format!("initial.coordinates: unknown {other:?} (canonical, original)"));
            Coordinates::Canonical
        }
    };

    let spectrum_count = positive_count(raw.spectrum.count, "spectrum.count", 10, &mut errors);
    let o = raw.output;
    let snapshots = positive_count(o.snapshots, "output.snapshots", 50, &mut errors);

    if !errors.is_empty() {
        return Err(ConfigError::Invalid(errors));
    }
    Ok(RunConfig {
        system: SystemConfig {
            n,
            m,
            a,
            b,
            coefficient,
            epsilon,
            eps_list,
            omega,
            horizon,
        },
        discretization: DiscretizationConfig {
            points,
            steps,
            sampling,
            smoothing,
        },
        control: ControlConfig {
            method,
            eta,
            cutoff,
            cg_tol,
            max_iter,
        },
        initial: InitialConfig {
            component,
            mode,
            amplitude,
            coordinates,
        },
        spectrum_count,
        output: OutputConfig {
            out_dir: o.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            dump_trajectory: o.dump_trajectory.unwrap_or(false),
            snapshots,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"
[system]
n = 1
A = [0.0]
B = [1.0]
omega = [0.3, 0.7]
T = 0.5
"#;

    #[test]
    fn minimal_heat_defaults() {
        let c = parse_str(HEAT).unwrap();
        assert_eq!(c.system.m, 1);
        assert!(c.system.coefficient.is_constant());
        let h = 1.0 / (c.discretization.points as f64 + 1.0);
        assert_eq!(c.control.eta, h * h);
        assert_eq!(c.control.cutoff, 1.0);
        assert_eq!(c.control.method, Method::Hum);
        assert_eq!(c.system.eps_list, DEFAULT_EPS_LIST.to_vec());
        assert_eq!(c.discretization.steps, None);
    }

    #[test]
    fn reversed_omega_is_reported() {
        let text = HEAT.replace("[0.3, 0.7]", "[0.8, 0.3]");
        match parse_str(&text) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.contains("omega.left < omega.right")), "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collects_every_violation() {
        let text = r#"
[system]
n = 2
A = [1.0, 0.0, 0.0]
B = [1.0, 1.0]
omega = [0.8, 0.3]
T = -1.0

[control]
eta = -1.0
"#;
        match parse_str(text) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.starts_with("system.A")), "{v:?}");
                assert!(v.iter().any(|e| e.starts_with("system.omega")));
                assert!(v.iter().any(|e| e.starts_with("system.T")));
                assert!(v.iter().any(|e| e.starts_with("control.eta")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_str("[system]\nn = = 2\n").unwrap_err();
        match err {
            ConfigError::Parse(msg) => assert!(msg.contains("line 2") || msg.contains("2:"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_str("[system]\nbogus = 1\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn resolution_and_step_checks() {
        let text = r#"
[system]
n = 1
A = [0.0]
B = [1.0]
omega = [0.3, 0.7]
T = 1.0
epsilon = 0.05
coefficient = { kind = "sin", params = [2.0, 1.0] }

[discretization]
N = 100
M = 10
"#;
        match parse_str(text) {
            Err(ConfigError::Invalid(v)) => {
                assert!(v.iter().any(|e| e.contains("do not resolve")));
                assert!(v.iter().any(|e| e.starts_with("discretization.M")));
            }
            other => panic!("{other:?}"),
        }
    }
}
