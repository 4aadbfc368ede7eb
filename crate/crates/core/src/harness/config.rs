//! `key = value` experiment configuration with per-experiment defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{TestFnError, TestFunction};
use crate::params::{ModelParams, ParamError};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ATLAS_ZRP_OUT";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Syntax {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { origin: String, key: String },
    #[error("{origin}: invalid value for `{key}`: {message}")]
    BadValue {
        origin: String,
        key: String,
        message: String,
    },
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("experiment `{file}` in the config file conflicts with `{cli}` on the command line")]
    ExperimentMismatch { file: String, cli: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("invalid model parameters at n = {n}: {source}")]
    Params { n: u32, source: ParamError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Stationarity,
    Continuity,
    MeanCurrent,
    QvConvergence,
    BgDecay,
    BgTerms,
    BoundaryVariance,
    Hurst,
    MollifierGap,
    MartingaleResidual,
    SpdeSelftest,
    InitialField,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 12] = [
        ExperimentId::Stationarity,
        ExperimentId::Continuity,
        ExperimentId::MeanCurrent,
        ExperimentId::QvConvergence,
        ExperimentId::BgDecay,
        ExperimentId::BgTerms,
        ExperimentId::BoundaryVariance,
        ExperimentId::Hurst,
        ExperimentId::MollifierGap,
        ExperimentId::MartingaleResidual,
        ExperimentId::SpdeSelftest,
        ExperimentId::InitialField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Stationarity => "stationarity",
            ExperimentId::Continuity => "continuity",
            ExperimentId::MeanCurrent => "mean-current",
            ExperimentId::QvConvergence => "qv-convergence",
            ExperimentId::BgDecay => "bg-decay",
            ExperimentId::BgTerms => "bg-terms",
            ExperimentId::BoundaryVariance => "boundary-variance",
            ExperimentId::Hurst => "hurst",
            ExperimentId::MollifierGap => "mollifier-gap",
            ExperimentId::MartingaleResidual => "martingale-residual",
            ExperimentId::SpdeSelftest => "spde-selftest",
            ExperimentId::InitialField => "initial-field",
        }
    }

    /// Tolerance names accepted under `tol.` and their defaults.
    pub fn tolerance_defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            ExperimentId::Continuity => &[("min_events", 1e5)],
            ExperimentId::Stationarity => &[("significance", 0.01), ("min_site_samples", 200.0)],
            ExperimentId::MeanCurrent => &[("sigmas", 3.0)],
            ExperimentId::QvConvergence => &[("max_gap", 0.10)],
            ExperimentId::InitialField => &[("sigmas", 3.0), ("variance", 0.10), ("significance", 0.01)],
            ExperimentId::BgTerms => &[("psi_max_size", 14.0)],
            ExperimentId::BgDecay => &[("max_slope", 0.0)],
            ExperimentId::BoundaryVariance => &[("slack", 0.3), ("sigmas", 3.0)],
            ExperimentId::Hurst => &[("target", 0.5), ("width", 0.15), ("correlation", 0.25)],
            ExperimentId::MollifierGap => &[("min_slope", 0.7), ("identity", 1e-9)],
            ExperimentId::MartingaleResidual => &[
                ("sigmas", 3.0),
                ("variance", 0.15),
                ("border_slope", -1.0),
                ("border_width", 0.2),
            ],
            ExperimentId::SpdeSelftest => &[("decay", 0.01), ("noise", 0.05), ("qv", 0.10)],
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| ConfigError::UnknownExperiment(s.to_string()))
    }
}

/// Textual test-function specification such as `bump(1, 0.6)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FnSpec {
    Bump { center: f64, width: f64 },
    BalancedBump { center: f64, width: f64 },
    Robin { kappa: f64, width: f64 },
    Mollifier { eps: f64 },
}

impl FnSpec {
    pub fn build(&self) -> Result<TestFunction, TestFnError> {
        match *self {
            FnSpec::Bump { center, width } => TestFunction::bump(center, width),
            FnSpec::BalancedBump { center, width } => TestFunction::balanced_bump(center, width),
            FnSpec::Robin { kappa, width } => TestFunction::robin(kappa, width),
            FnSpec::Mollifier { eps } => TestFunction::mollifier(eps),
        }
    }
}

impl fmt::Display for FnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            FnSpec::Bump { center, width } => write!(f, "bump({center}, {width})"),
            FnSpec::BalancedBump { center, width } => write!(f, "balanced_bump({center}, {width})"),
            FnSpec::Robin { kappa, width } => write!(f, "robin({kappa}, {width})"),
            FnSpec::Mollifier { eps } => write!(f, "mollifier({eps})"),
        }
    }
}

impl FromStr for FnSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| format!("expected name(args) in `{s}`"))?;
        if !s.ends_with(')') {
            return Err(format!("missing `)` in `{s}`"));
        }
        let name = s[..open].trim();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("bad argument `{}`: {e}", a.trim())))
            .collect::<Result<_, _>>()?;
        let want = |k: usize| {
            if args.len() == k {
                Ok(())
            } else {
                Err(format!("`{name}` takes {k} arguments, got {}", args.len()))
            }
        };
        match name {
            "bump" => want(2).map(|_| FnSpec::Bump {
                center: args[0],
                width: args[1],
            }),
            "balanced_bump" => want(2).map(|_| FnSpec::BalancedBump {
                center: args[0],
                width: args[1],
            }),
            "robin" => want(2).map(|_| FnSpec::Robin {
                kappa: args[0],
                width: args[1],
            }),
            "mollifier" => want(1).map(|_| FnSpec::Mollifier { eps: args[0] }),
            other => Err(format!("unknown test function `{other}`")),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Strictly increasing scaling parameters.
    pub n: Vec<u32>,
    /// Horizon in macroscopic time.
    pub t: f64,
    pub t_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    /// Lattice length; 0 selects it from the supports and `margin`.
    pub len: usize,
    /// Extra macroscopic room beyond the relevant support.
    pub margin: f64,
    pub delta: Vec<f64>,
    pub eps: Vec<f64>,
    pub functions: Vec<FnSpec>,
    /// Scaling parameters of the border-coefficient table.
    pub n_border: Vec<u32>,
    /// Minimal number of lattice sites spanned by a mollifier.
    pub min_resolution: f64,
    pub spde_h: f64,
    pub spde_m: f64,
    pub spde_tau: f64,
    pub tol: BTreeMap<String, f64>,
    pub out: PathBuf,
}

fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| lo * (hi / lo).powf(k as f64 / (points - 1) as f64))
        .collect()
}

fn default_out() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results"))
}

impl ExperimentConfig {
    /// The documented defaults, which are also the acceptance presets.
    pub fn defaults(experiment: ExperimentId) -> Self {
        use ExperimentId::*;
        let bump = FnSpec::Bump {
            center: 1.0,
            width: 0.6,
        };
        let mut c = Self {
            experiment,
            a: 0.0,
            b: 1.0,
            alpha: 1.0,
            beta: 1.0,
            n: vec![16],
            t: 0.01,
            t_grid: Vec::new(),
            replicas: 100,
            seed: 20_241_016,
            len: 0,
            margin: 0.5,
            delta: vec![0.25],
            eps: Vec::new(),
            functions: vec![bump],
            n_border: vec![8, 16, 32, 64],
            min_resolution: 3.0,
            spde_h: 0.02,
            spde_m: 3.0,
            spde_tau: 1e-3,
            tol: experiment
                .tolerance_defaults()
                .iter()
                .map(|&(k, v)| (k.to_string(), v))
                .collect(),
            out: default_out(),
        };
        match experiment {
            Continuity => {
                c.a = 1.0;
                c.t = 0.1;
                c.replicas = 4;
            }
            Stationarity => {
                c.a = 1.0;
                c.n = vec![8];
                c.len = 160;
                c.replicas = 200;
            }
            MeanCurrent => {
                c.a = 1.0;
                c.t = 0.05;
                c.replicas = 400;
            }
            QvConvergence => {
                c.n = vec![8, 16, 32];
            }
            InitialField => {
                c.replicas = 10_000;
                c.functions = vec![FnSpec::BalancedBump {
                    center: 5.0,
                    width: 4.5,
                }];
            }
            BgTerms => {
                c.replicas = 200;
                c.delta = vec![0.25, 0.5];
            }
            BgDecay => {
                c.n = vec![4, 8, 16];
                c.replicas = 1000;
            }
            BoundaryVariance => {
                c.n = vec![4, 8, 16, 32];
                c.t = 0.5;
                c.margin = 0.25;
                c.replicas = 200;
                c.functions = Vec::new();
            }
            Hurst => {
                c.b = 4.0;
                c.t_grid = geometric_grid(1e-3, 1e-1, 9);
                c.t = 0.1;
                c.replicas = 1000;
                c.functions = Vec::new();
            }
            MollifierGap => {
                c.n = vec![32];
                c.eps = vec![0.4, 0.2, 0.1];
                c.replicas = 1000;
                c.functions = Vec::new();
            }
            MartingaleResidual => {
                c.a = 1.0;
                c.t = 0.05;
                c.t_grid = (1..=10).map(|k| 0.005 * k as f64).collect();
                c.replicas = 400;
                c.functions = vec![
                    FnSpec::Bump {
                        center: 0.0,
                        width: 1.0,
                    },
                    FnSpec::Robin {
                        kappa: 2.0,
                        width: 1.5,
                    },
                ];
            }
            SpdeSelftest => {
                c.a = 1.0;
                c.t = 0.1;
                c.replicas = 1000;
                c.functions = vec![
                    bump,
                    FnSpec::Robin {
                        kappa: 2.0,
                        width: 1.5,
                    },
                ];
            }
        }
        c
    }

    /// Model parameters at scaling parameter `n`.
    pub fn params(&self, n: u32) -> Result<ModelParams, ConfigError> {
        ModelParams::derive(self.a, self.b, self.alpha, self.beta, n).map_err(|source| ConfigError::Params { n, source })
    }

    pub fn tol(&self, name: &str) -> f64 {
        *self
            .tol
            .get(name)
            .unwrap_or_else(|| panic!("tolerance `{name}` is not defined for {}", self.experiment))
    }

    pub fn test_functions(&self) -> Result<Vec<TestFunction>, ConfigError> {
        self.functions
            .iter()
            .map(|s| s.build().map_err(|e| ConfigError::Invalid(format!("{s}: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.n.is_empty() {
            return bad("the n-grid is empty".into());
        }
        if self.n.windows(2).any(|w| w[0] >= w[1]) || self.n_border.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n-grids must be strictly increasing".into());
        }
        if self.alpha < 1.0 {
            return bad(format!(
                "alpha = {} lies in the excluded strong-asymmetry regime; the scaling limit requires alpha >= 1",
                self.alpha
            ));
        }
        for &n in self.n.iter().chain(&self.n_border) {
            self.params(n)?;
        }
        if self.replicas < 2 {
            return bad(format!("replicas = {} but variance estimators need at least 2", self.replicas));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return bad(format!("t = {} must be positive", self.t));
        }
        if self.t_grid.iter().any(|&s| !(s > 0.0)) || self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("t_grid must be positive and strictly increasing".into());
        }
        if !(self.margin >= 0.0) || !(self.min_resolution > 0.0) {
            return bad("margin must be nonnegative and min_resolution positive".into());
        }
        if self.delta.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return bad("delta values must lie in (0, 1)".into());
        }
        if self.eps.iter().any(|&e| !(e > 0.0)) {
            return bad("eps values must be positive".into());
        }
        if !(self.spde_h > 0.0 && self.spde_m > self.spde_h && self.spde_tau > 0.0) {
            return bad("SPDE grid needs 0 < h < m and tau > 0".into());
        }
        let allowed = self.experiment.tolerance_defaults();
        for k in self.tol.keys() {
            if !allowed.iter().any(|(a, _)| a == k) {
                return bad(format!("tolerance `tol.{k}` does not apply to {}", self.experiment));
            }
        }
        self.test_functions()?;
        Ok(())
    }

    /// Canonical text form; parsing it reproduces `self` exactly.
    pub fn to_canonical(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let ints = |v: &[u32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("experiment", self.experiment.to_string());
        kv("a", format!("{:?}", self.a));
        kv("b", format!("{:?}", self.b));
        kv("alpha", format!("{:?}", self.alpha));
        kv("beta", format!("{:?}", self.beta));
        kv("n", ints(&self.n));
        kv("t", format!("{:?}", self.t));
        kv("t_grid", list(&self.t_grid));
        kv("replicas", self.replicas.to_string());
        kv("seed", self.seed.to_string());
        kv("len", self.len.to_string());
        kv("margin", format!("{:?}", self.margin));
        kv("delta", list(&self.delta));
        kv("eps", list(&self.eps));
        kv(
            "functions",
            self.functions
                .iter()
                .map(|f| format!("{f}"))
                .collect::<Vec<_>>()
                .join("; "),
        );
        kv("n_border", ints(&self.n_border));
        kv("min_resolution", format!("{:?}", self.min_resolution));
        kv("spde.h", format!("{:?}", self.spde_h));
        kv("spde.m", format!("{:?}", self.spde_m));
        kv("spde.tau", format!("{:?}", self.spde_tau));
        for (k, v) in &self.tol {
            kv(&format!("tol.{k}"), format!("{v:?}"));
        }
        kv("out", self.out.display().to_string());
        s
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::BadValue {
            origin: origin.to_string(),
            key: key.to_string(),
            message,
        };
        let float = |v: &str| v.trim().parse::<f64>().map_err(|e| bad(format!("`{}`: {e}", v.trim())));
        let floats = |v: &str| -> Result<Vec<f64>, ConfigError> {
            v.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("`{x}`: {e}"))))
                .collect()
        };
        let ints = |v: &str| -> Result<Vec<u32>, ConfigError> {
            v.split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<u32>().map_err(|e| bad(format!("`{x}`: {e}"))))
                .collect()
        };
        match key {
            "experiment" => {
                let id: ExperimentId = value.trim().parse()?;
                if id != self.experiment {
                    return Err(ConfigError::ExperimentMismatch {
                        file: id.to_string(),
                        cli: self.experiment.to_string(),
                    });
                }
            }
            "a" => self.a = float(value)?,
            "b" => self.b = float(value)?,
            "alpha" => {
                self.alpha = match value.trim() {
                    "inf" | "infinity" => f64::INFINITY,
                    v => float(v)?,
                }
            }
            "beta" => self.beta = float(value)?,
            "n" => self.n = ints(value)?,
            "t" => self.t = float(value)?,
            "t_grid" => self.t_grid = floats(value)?,
            "replicas" => {
                self.replicas = value.trim().parse().map_err(|e| bad(format!("{e}")))?;
            }
            "seed" => self.seed = value.trim().parse().map_err(|e| bad(format!("{e}")))?,
            "len" => self.len = value.trim().parse().map_err(|e| bad(format!("{e}")))?,
            "margin" => self.margin = float(value)?,
            "delta" => self.delta = floats(value)?,
            "eps" => self.eps = floats(value)?,
            "functions" => {
                self.functions = value
                    .split(';')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(|x| x.parse::<FnSpec>().map_err(bad))
                    .collect::<Result<_, _>>()?;
            }
            "n_border" => self.n_border = ints(value)?,
            "min_resolution" => self.min_resolution = float(value)?,
            "spde.h" => self.spde_h = float(value)?,
            "spde.m" => self.spde_m = float(value)?,
            "spde.tau" => self.spde_tau = float(value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            k if k.starts_with("tol.") => {
                let name = &k[4..];
                if !self.experiment.tolerance_defaults().iter().any(|(a, _)| *a == name) {
                    return Err(ConfigError::UnknownKey {
                        origin: origin.to_string(),
                        key: key.to_string(),
                    });
                }
                self.tol.insert(name.to_string(), float(value)?);
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    origin: origin.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

/// Splits a config text into `(line, key, value)` triples.
pub fn parse_lines(text: &str, source_name: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            source_name: source_name.to_string(),
            line: i + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                source_name: source_name.to_string(),
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Defaults, then the file text, then `overrides` (command-line flags), then validation.
pub fn parse_config(
    experiment: ExperimentId,
    file: Option<(&str, &str)>,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some((name, text)) = file {
        let mut seen = BTreeMap::new();
        for (line, k, v) in parse_lines(text, name)? {
            if let Some(first) = seen.insert(k.clone(), line) {
                return Err(ConfigError::Syntax {
                    source_name: name.to_string(),
                    line,
                    message: format!("`{k}` already set on line {first}"),
                });
            }
            cfg.set(&k, &v, &format!("{name}:{line}"))?;
        }
    }
    for (k, v) in overrides {
        cfg.set(k, v, &format!("--{k}"))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the experiment id from a config text, if present.
pub fn experiment_in(text: &str, source_name: &str) -> Result<Option<ExperimentId>, ConfigError> {
    for (_, k, v) in parse_lines(text, source_name)? {
        if k == "experiment" {
            return v.parse().map(Some);
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        for id in ExperimentId::ALL {
            let c = parse_config(id, Some(("empty.cfg", "")), &[]).unwrap();
            assert_eq!(c, ExperimentConfig::defaults(id));
        }
    }

    #[test]
    fn defaults_are_valid() {
        for id in ExperimentId::ALL {
            ExperimentConfig::defaults(id).validate().unwrap();
        }
    }

    #[test]
    fn round_trip_is_identity() {
        for id in ExperimentId::ALL {
            let c = ExperimentConfig::defaults(id);
            let text = c.to_canonical();
            let back = parse_config(id, Some(("canon", &text)), &[]).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_canonical(), text);
        }
    }

    #[test]
    fn excluded_alpha_rejected() {
        let err = parse_config(ExperimentId::Continuity, Some(("x.cfg", "alpha = 0.5")), &[]).unwrap_err();
        assert!(err.to_string().contains("excluded"), "{err}");
    }

    #[test]
    fn unknown_key_names_its_line() {
        let err = parse_config(ExperimentId::Hurst, Some(("x.cfg", "# c\n\nreplicas = 10\nfoo = 1\n")), &[]).unwrap_err();
        assert_eq!(err.to_string(), "x.cfg:4: unknown key `foo`");
    }

    #[test]
    fn syntax_error_has_line() {
        let err = parse_config(ExperimentId::Hurst, Some(("x.cfg", "a = 1\nbroken line\n")), &[]).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
    }

    #[test]
    fn tolerance_keys_are_per_experiment() {
        assert!(parse_config(ExperimentId::Hurst, Some(("x", "tol.width = 0.2")), &[]).is_ok());
        assert!(parse_config(ExperimentId::Hurst, Some(("x", "tol.qv = 0.2")), &[]).is_err());
    }

    #[test]
    fn flags_override_file() {
        let c = parse_config(
            ExperimentId::QvConvergence,
            Some(("x", "replicas = 10\nn = 4, 8\n")),
            &[("replicas".into(), "20".into())],
        )
        .unwrap();
        assert_eq!(c.replicas, 20);
        assert_eq!(c.n, vec![4, 8]);
    }

    #[test]
    fn grid_and_replica_invariants() {
        let p = |s: &str| parse_config(ExperimentId::QvConvergence, Some(("x", s)), &[]);
        assert!(p("n = 8, 8").is_err());
        assert!(p("n = 16, 8").is_err());
        assert!(p("replicas = 1").is_err());
        assert!(p("b = 8\nn = 4, 8").is_err());
        assert!(p("experiment = hurst").is_err());
        assert!(p("experiment = qv-convergence").is_ok());
    }

    #[test]
    fn function_specs_parse() {
        let f: FnSpec = "balanced_bump(5, 4.5)".parse().unwrap();
        assert_eq!(f, FnSpec::BalancedBump { center: 5.0, width: 4.5 });
        assert!("bump(1)".parse::<FnSpec>().is_err());
        assert!("wave(1, 2)".parse::<FnSpec>().is_err());
        assert_eq!(f.to_string().parse::<FnSpec>().unwrap(), f);
    }

    proptest! {
        #[test]
        fn arbitrary_round_trip(
            a in 0.0f64..3.0,
            b in 0.01f64..3.9,
            seed in any::<u64>(),
            replicas in 2usize..100_000,
            t in 1e-6f64..10.0,
            width in 0.1f64..3.0,
        ) {
            let mut c = ExperimentConfig::defaults(ExperimentId::QvConvergence);
            c.a = a;
            c.b = b;
            c.n = vec![4, 8];
            c.seed = seed;
            c.replicas = replicas;
            c.t = t;
            c.functions = vec![FnSpec::Bump { center: width, width }];
            c.validate().unwrap();
            let back = parse_config(c.experiment, Some(("p", &c.to_canonical())), &[]).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
