//! Run configuration: a TOML file, `HQA_*` environment overrides, then flags.

use std::path::{Path, PathBuf};

use hyqa_core::dynamics::{AnnealOptions, InitialState};
use hyqa_core::eigensolver::LanczosOptions;
use hyqa_core::rates::RateMethod;
use hyqa_core::rotation::RotationOptions;
use hyqa_core::spin_system::builtins;
use hyqa_core::{AnnealingHamiltonian, BathParams, IsingInstance, Schedule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Prefix of environment variables overriding config keys, e.g.
/// `HQA_BATH_ETA=0.25` or `HQA_SEED=3`.
pub const ENV_PREFIX: &str = "HQA_";

/// Low-frequency line width (mK) when the config names neither `w` nor `eps_l`.
pub const DEFAULT_WIDTH: f64 = 10.0;

const SECTIONS: [&str; 5] = ["instance", "schedule", "bath", "solver", "run"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub instance: InstanceConfig,
    pub schedule: ScheduleConfig,
    pub bath: BathConfig,
    pub solver: SolverConfig,
    pub run: RunBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            jobs: None,
            instance: InstanceConfig::default(),
            schedule: ScheduleConfig::default(),
            bath: BathConfig::default(),
            solver: SolverConfig::default(),
            run: RunBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    /// `single_qubit`, `lz_toy` or `dickson16`; ignored when `path` is set.
    pub builtin: String,
    pub path: Option<PathBuf>,
    pub delta_spread: f64,
    /// Bias and tunneling of the `single_qubit` builtin.
    pub h: f64,
    pub delta: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self {
            builtin: "dickson16".into(),
            path: None,
            delta_spread: builtins::DICKSON_DEFAULT_SPREAD,
            h: 1.0,
            delta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// `linear` or `constant`; ignored when `path` is set.
    pub builtin: String,
    pub path: Option<PathBuf>,
    pub e0: f64,
    /// Values of the `constant` builtin.
    pub a: f64,
    pub b: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            builtin: "linear".into(),
            path: None,
            e0: 120.0,
            a: 1.0,
            b: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BathConfig {
    /// MRT line width (mK); give this or `eps_l`. Both unset means
    /// `DEFAULT_WIDTH`.
    pub w: Option<f64>,
    pub eps_l: Option<f64>,
    pub eta: f64,
    pub omega_c: f64,
}

impl Default for BathConfig {
    fn default() -> Self {
        Self {
            w: None,
            eps_l: None,
            eta: 0.1,
            omega_c: 8e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Level(usize),
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub levels: usize,
    pub s_start: f64,
    pub s_end: f64,
    /// `ground`, `thermal` or a level index.
    pub initial: InitialSpec,
    pub target: Option<usize>,
    pub method: RateMethod,
    pub rotate: bool,
    pub rotation_half_width: f64,
    pub rotation_window: Option<[f64; 2]>,
    pub rotation_rel_tol: f64,
    pub rotation_abs_tol: f64,
    pub max_ds: f64,
    pub min_ds: f64,
    pub max_dtheta: f64,
    pub max_domega: f64,
    pub max_dsigma: f64,
    pub max_dcoupling: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub stiff_threshold: f64,
    pub lanczos_tol: f64,
    pub krylov_dim: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let a = AnnealOptions::default();
        let r = RotationOptions::default();
        let l = LanczosOptions::default();
        Self {
            levels: a.levels,
            s_start: a.s_start,
            s_end: a.s_end,
            initial: InitialSpec::Named("ground".into()),
            target: None,
            method: a.method,
            rotate: a.rotate,
            rotation_half_width: a.rotation_half_width,
            rotation_window: None,
            rotation_rel_tol: r.rel_tol,
            rotation_abs_tol: r.abs_tol,
            max_ds: a.max_ds,
            min_ds: a.min_ds,
            max_dtheta: a.max_dtheta,
            max_domega: a.max_domega,
            max_dsigma: a.max_dsigma,
            max_dcoupling: a.max_dcoupling,
            rel_tol: a.rel_tol,
            abs_tol: a.abs_tol,
            stiff_threshold: a.stiff_threshold,
            lanczos_tol: l.rel_tol,
            krylov_dim: l.krylov_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub tf_ms: Vec<f64>,
    pub temp_mk: Vec<f64>,
    /// Level pair reported by `rates`.
    pub pair: [usize; 2],
    /// Uniform anneal points for `rates` and `spectrum`.
    pub s_points: usize,
    /// Levels listed by `spectrum`; `solver.levels` when unset.
    pub spectrum_levels: Option<usize>,
    /// Bias sweep of `single-qubit` (mK).
    pub h_min: f64,
    pub h_max: f64,
    pub h_points: usize,
    /// Fixed tunneling of `single-qubit` (mK).
    pub sq_delta: f64,
    /// Random draws per `validate` check.
    pub validate_draws: usize,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            tf_ms: vec![2.0],
            temp_mk: vec![10.0],
            pair: [0, 1],
            s_points: 41,
            spectrum_levels: None,
            h_min: 5.0,
            h_max: 500.0,
            h_points: 200,
            sq_delta: 0.5,
            validate_draws: 20,
        }
    }
}

impl RunConfig {
    /// Parse TOML text, then apply `HQA_*` overrides from `env`.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        // typed parse of the text first, for line diagnostics
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        if vars.is_empty() {
            return Ok(cfg);
        }
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        apply_env(&mut table, vars)?;
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("after {ENV_PREFIX}* overrides: {e}")))
    }

    /// Load `path` (or the defaults when `None`) with process environment
    /// overrides. Relative paths inside the file resolve against its directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::from_toml_with_env(&text, std::env::vars())?;
        if let Some(dir) = path.and_then(Path::parent) {
            for p in [&mut cfg.instance.path, &mut cfg.schedule.path].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Canonical TOML of the resolved configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical configuration, without the output directory
    /// and worker count, which do not change results.
    pub fn hash(&self) -> String {
        let keyed = RunConfig {
            out: PathBuf::new(),
            jobs: None,
            ..self.clone()
        };
        hex::encode(Sha256::digest(keyed.canonical().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("solver.rotation_rel_tol", self.solver.rotation_rel_tol),
            ("solver.rotation_abs_tol", self.solver.rotation_abs_tol),
            ("solver.rel_tol", self.solver.rel_tol),
            ("solver.abs_tol", self.solver.abs_tol),
            ("solver.lanczos_tol", self.solver.lanczos_tol),
            ("solver.max_ds", self.solver.max_ds),
            ("solver.min_ds", self.solver.min_ds),
            ("solver.max_dtheta", self.solver.max_dtheta),
            ("solver.max_domega", self.solver.max_domega),
            ("solver.max_dsigma", self.solver.max_dsigma),
            ("solver.max_dcoupling", self.solver.max_dcoupling),
            ("solver.stiff_threshold", self.solver.stiff_threshold),
            ("schedule.e0", self.schedule.e0),
            ("run.sq_delta", self.run.sq_delta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CliError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, list) in [("run.tf_ms", &self.run.tf_ms), ("run.temp_mk", &self.run.temp_mk)] {
            if list.is_empty() || list.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(CliError::Config(format!("{name} must be a nonempty list of positive values")));
            }
        }
        if self.run.s_points < 2 || self.run.h_points < 2 {
            return Err(CliError::Config("run.s_points and run.h_points must be at least 2".into()));
        }
        if !(self.run.h_min > 0.0 && self.run.h_min < self.run.h_max) {
            return Err(CliError::Config("run.h_min and run.h_max must satisfy 0 < h_min < h_max".into()));
        }
        if self.run.pair[0] == self.run.pair[1] {
            return Err(CliError::Config("run.pair must name two different levels".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        for p in [&self.instance.path, &self.schedule.path].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<IsingInstance, CliError> {
        let inst = match &self.instance.path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read instance {}: {e}", p.display())))?;
                IsingInstance::from_toml_str(&text)
                    .map_err(|e| CliError::Config(format!("instance {}: {e}", p.display())))?
            }
            None => match self.instance.builtin.as_str() {
                "single_qubit" => builtins::single_qubit(self.instance.h, self.instance.delta)?,
                "dickson16" => builtins::dickson16(self.instance.delta_spread)?,
                name => builtins::by_name(name)?,
            },
        };
        Ok(inst)
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        match &self.schedule.path {
            Some(p) => {
                let file = std::fs::File::open(p)
                    .map_err(|e| CliError::Config(format!("cannot read schedule {}: {e}", p.display())))?;
                Schedule::from_csv(file).map_err(|e| CliError::Config(format!("schedule {}: {e}", p.display())))
            }
            None => match self.schedule.builtin.as_str() {
                "linear" => Ok(Schedule::linear(self.schedule.e0)),
                "constant" => Ok(Schedule::constant(self.schedule.a, self.schedule.b)),
                other => Err(CliError::Config(format!(
                    "unknown builtin schedule {other:?} (expected linear or constant)"
                ))),
            },
        }
    }

    pub fn hamiltonian(&self) -> Result<AnnealingHamiltonian, CliError> {
        Ok(AnnealingHamiltonian::new(self.instance()?, self.schedule()?)?)
    }

    /// Bath at temperature `t_mk`; a given `w` is held fixed across
    /// temperatures, a given `eps_l` likewise.
    pub fn bath_at(&self, t_mk: f64) -> Result<BathParams, CliError> {
        let b = &self.bath;
        let w = match (b.w, b.eps_l) {
            (None, None) => Some(DEFAULT_WIDTH),
            (w, _) => w,
        };
        Ok(BathParams::new(w, b.eps_l, b.eta, b.omega_c, t_mk)?)
    }

    /// Bath at the first temperature of `run.temp_mk`.
    pub fn bath(&self) -> Result<BathParams, CliError> {
        self.bath_at(self.run.temp_mk[0])
    }

    pub fn lanczos(&self) -> LanczosOptions {
        LanczosOptions {
            rel_tol: self.solver.lanczos_tol,
            krylov_dim: self.solver.krylov_dim,
            seed: self.seed,
            ..LanczosOptions::default()
        }
    }

    pub fn anneal_options(&self) -> Result<AnnealOptions, CliError> {
        let s = &self.solver;
        let initial = match &s.initial {
            InitialSpec::Level(n) => InitialState::Level(*n),
            InitialSpec::Named(name) if name == "ground" => InitialState::Level(0),
            InitialSpec::Named(name) if name == "thermal" => InitialState::Thermal,
            InitialSpec::Named(other) => {
                return Err(CliError::Config(format!(
                    "solver.initial must be \"ground\", \"thermal\" or a level index, got {other:?}"
                )))
            }
        };
        Ok(AnnealOptions {
            levels: s.levels,
            s_start: s.s_start,
            s_end: s.s_end,
            initial,
            target: s.target,
            rotate: s.rotate,
            rotation: RotationOptions {
                pair: (0, 1),
                rel_tol: s.rotation_rel_tol,
                abs_tol: s.rotation_abs_tol,
                lanczos: self.lanczos(),
                ..RotationOptions::default()
            },
            rotation_half_width: s.rotation_half_width,
            rotation_window: s.rotation_window.map(|[a, b]| (a, b)),
            max_ds: s.max_ds,
            min_ds: s.min_ds,
            max_dtheta: s.max_dtheta,
            max_domega: s.max_domega,
            max_dsigma: s.max_dsigma,
            max_dcoupling: s.max_dcoupling,
            method: s.method,
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            stiff_threshold: s.stiff_threshold,
            lanczos: self.lanczos(),
            ..AnnealOptions::default()
        })
    }
}

/// Apply `HQA_<SECTION>_<KEY>` and `HQA_<KEY>` overrides. Values are read as
/// TOML (`0.25`, `[1, 2]`, `true`) and fall back to plain strings.
fn apply_env<I>(table: &mut toml::Table, env: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let name = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let value = parse_value(&raw);
        let section = SECTIONS.iter().find(|s| name.starts_with(&format!("{s}_")));
        match section {
            Some(s) => {
                let field = name[s.len() + 1..].to_string();
                let entry = table
                    .entry(s.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                match entry {
                    toml::Value::Table(t) => {
                        t.insert(field, value);
                    }
                    _ => return Err(CliError::Config(format!("{key}: [{s}] is not a table"))),
                }
            }
            None => {
                table.insert(name, value);
            }
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Comma-separated list of numbers, as given to `--tf-ms` and `--temp-mk`.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

/// `m,n` level pair.
pub fn parse_pair(text: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([
            a.parse().map_err(|e| format!("{a:?}: {e}"))?,
            b.parse().map_err(|e| format!("{b:?}: {e}"))?,
        ]),
        _ => Err(format!("expected m,n, got {text:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::from_toml_with_env("", env(&[])).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let again = RunConfig::from_toml_with_env(&cfg.canonical(), env(&[])).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn env_overrides_file() {
        let text = "seed = 4\n[bath]\neta = 0.2\n";
        let cfg = RunConfig::from_toml_with_env(
            text,
            env(&[
                ("HQA_BATH_ETA", "0.25"),
                ("HQA_BATH_OMEGA_C", "1e3"),
                ("HQA_RUN_TF_MS", "[0.5, 1.0]"),
                ("HQA_SOLVER_METHOD", "marcus"),
                ("HQA_SEED", "9"),
                ("OTHER", "1"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.bath.eta, 0.25);
        assert_eq!(cfg.bath.omega_c, 1e3);
        assert_eq!(cfg.run.tf_ms, vec![0.5, 1.0]);
        assert_eq!(cfg.solver.method, RateMethod::Marcus);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn errors_carry_locations() {
        let err = RunConfig::from_toml_with_env("[bath]\neta = \"x\"\n", env(&[])).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::from_toml_with_env("[bath]\nbogus = 1\n", env(&[])).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.run.tf_ms = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.solver.rel_tol = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.instance.path = Some("/nonexistent/instance.toml".into());
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn lists_and_pairs() {
        assert_eq!(parse_list("0.04, 0.4,4").unwrap(), vec![0.04, 0.4, 4.0]);
        assert!(parse_list("1,x").is_err());
        assert_eq!(parse_pair("0,1").unwrap(), [0, 1]);
        assert!(parse_pair("0").is_err());
    }
}
