//! Run configuration: a TOML file with one level of sections, plus
//! `section.key=value` overrides. Every problem (unknown key, type
//! mismatch, range violation) is collected into one error.
//!
//! ```toml
//! [run]
//! output_dir = "out"
//! seed = 0
//!
//! [solver]
//! kernel = "biot-savart-2d"
//! gamma = 0.5
//! h = "1/32"
//! dt = 1e-3
//! T = 0.5
//!
//! [simulate]
//! rho0 = { kind = "gaussian", amplitude = 1.0, sigma = 0.2, radius = 0.5 }
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{ContinuitySweepConfig, ConvergenceCase, ConvergenceConfig, NormKind, SolverSettings};
use crate::fields::Profile;
use crate::function_spaces::{dyadic_levels, DEFAULT_PAIR_BUDGET};
use crate::kernels::Builtin;
use crate::singular_integrals::SingularCellRule;

/// Environment variable that overrides `run.worker_count`.
pub const WORKERS_ENV: &str = "TRANSPORT_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Continuity,
    Convergence,
    Norms,
    ValidateKernels,
    ValidateSio,
    Lemmas,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Simulate,
        Command::Continuity,
        Command::Convergence,
        Command::Norms,
        Command::ValidateKernels,
        Command::ValidateSio,
        Command::Lemmas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Continuity => "continuity",
            Command::Convergence => "convergence",
            Command::Norms => "norms",
            Command::ValidateKernels => "validate-kernels",
            Command::ValidateSio => "validate-sio",
            Command::Lemmas => "lemmas",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(vec![format!("unknown command '{s}'")]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub worker_count: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: PathBuf::from("out"),
            seed: 0,
            worker_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsvTag {
    Csv,
}

/// Initial density: a named preset or lattice samples from a CSV file
/// with columns `x_1..x_n,value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rho0Spec {
    Csv { kind: CsvTag, path: PathBuf },
    Preset(Profile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub rho0: Rho0Spec,
    pub checkpoint_times: Vec<f64>,
    /// Write marker positions every this many steps (0: checkpoints only).
    pub snapshot_every: usize,
    /// Half-width of the marker box; derived from the support when absent.
    pub domain_extent: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            rho0: Rho0Spec::Preset(Profile::Gaussian {
                amplitude: 1.0,
                sigma: 0.2,
                radius: 0.5,
                center: vec![],
            }),
            checkpoint_times: Vec::new(),
            snapshot_every: 0,
            domain_extent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuitySection {
    pub norm_kind: NormKind,
    pub base: Profile,
    pub perturbation: Profile,
    pub epsilons: Vec<f64>,
    pub checkpoint_times: Vec<f64>,
    pub eval_spacing: Option<f64>,
}

impl ContinuitySection {
    fn from_sweep(c: &ContinuitySweepConfig) -> Self {
        ContinuitySection {
            norm_kind: c.norm_kind,
            base: c.base.clone(),
            perturbation: c.perturbation.clone(),
            epsilons: c.epsilons.clone(),
            checkpoint_times: c.checkpoint_times.clone(),
            eval_spacing: c.eval_spacing,
        }
    }

    pub fn sweep(&self, solver: &SolverSettings) -> ContinuitySweepConfig {
        ContinuitySweepConfig {
            solver: solver.clone(),
            base: self.base.clone(),
            perturbation: self.perturbation.clone(),
            epsilons: self.epsilons.clone(),
            norm_kind: self.norm_kind,
            checkpoint_times: self.checkpoint_times.clone(),
            eval_spacing: self.eval_spacing,
        }
    }
}

impl Default for ContinuitySection {
    fn default() -> Self {
        Self::from_sweep(&ContinuitySweepConfig::default_holder())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsSection {
    /// CSV with columns `x_1..x_n,value`.
    pub input: PathBuf,
    pub gamma: f64,
    pub pair_budget: usize,
    pub h_levels: Vec<f64>,
}

impl Default for NormsSection {
    fn default() -> Self {
        NormsSection {
            input: PathBuf::new(),
            gamma: 0.5,
            pair_budget: DEFAULT_PAIR_BUDGET,
            h_levels: dyadic_levels(0.5, 5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SioSection {
    pub kernel: String,
    pub i: usize,
    pub j: usize,
    pub gamma: f64,
    pub h: f64,
    /// Excision radius; `2h` when absent.
    pub epsilon: Option<f64>,
    pub singular_cell_rule: SingularCellRule,
    /// Subset of the built-in test family; all when empty.
    pub fields: Vec<String>,
}

impl Default for SioSection {
    fn default() -> Self {
        SioSection {
            kernel: Builtin::BiotSavart2d.name().into(),
            i: 0,
            j: 1,
            gamma: 0.5,
            h: 1.0 / 16.0,
            epsilon: None,
            singular_cell_rule: SingularCellRule::Exclude,
            fields: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmasSection {
    pub trials: usize,
    pub gamma: f64,
}

impl Default for LemmasSection {
    fn default() -> Self {
        LemmasSection { trials: 200, gamma: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelsSection {
    /// Kernel names; every built-in when empty.
    pub kernels: Vec<String>,
    pub quadrature_order: usize,
    pub kernel_sign: f64,
}

impl Default for KernelsSection {
    fn default() -> Self {
        KernelsSection {
            kernels: Vec::new(),
            quadrature_order: 256,
            kernel_sign: 1.0,
        }
    }
}

/// Fully validated configuration of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub run: RunSection,
    pub solver: SolverSettings,
    pub simulate: SimulateSection,
    pub continuity: ContinuitySection,
    pub convergence: ConvergenceConfig,
    pub norms: NormsSection,
    pub sio: SioSection,
    pub lemmas: LemmasSection,
    pub kernels: KernelsSection,
}

const SECTIONS: [&str; 9] = [
    "run",
    "solver",
    "simulate",
    "continuity",
    "convergence",
    "norms",
    "sio",
    "lemmas",
    "kernels",
];

/// `"1/32"` style fractions are accepted wherever a number is expected.
fn normalize(v: Value) -> Value {
    match v {
        Value::String(s) => match s.split_once('/') {
            Some((a, b)) => match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                (Ok(x), Ok(y)) if y != 0.0 => Value::Float(x / y),
                _ => Value::String(s),
            },
            None => Value::String(s),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(normalize).collect()),
        Value::Table(t) => Value::Table(t.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

/// Parses the value half of a `key=value` override as TOML, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or(Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn clean_toml_error(e: toml::de::Error) -> String {
    e.message().trim().to_string()
}

/// Overlays the user's keys on `default`. Each key is tried on its own so
/// that every bad key is reported, not just the first.
fn overlay<T: Serialize + DeserializeOwned>(default: &T, user: Option<&Table>, section: &str, errors: &mut Vec<String>) -> T {
    let base = match Value::try_from(default) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("configuration sections serialize to tables"),
    };
    let Some(user) = user else {
        return base.try_into().expect("defaults deserialize");
    };
    let before = errors.len();
    for (k, v) in user {
        let mut probe = base.clone();
        probe.insert(k.clone(), v.clone());
        if let Err(e) = Table::try_into::<T>(probe) {
            errors.push(format!("[{section}] {k}: {}", clean_toml_error(e)));
        }
    }
    let mut merged = base;
    for (k, v) in user {
        merged.insert(k.clone(), v.clone());
    }
    match merged.try_into::<T>() {
        Ok(t) => t,
        Err(e) => {
            if errors.len() == before {
                errors.push(format!("[{section}]: {}", clean_toml_error(e)));
            }
            default_from_table(default)
        }
    }
}

fn default_from_table<T: Serialize + DeserializeOwned>(default: &T) -> T {
    Value::try_from(default).unwrap().try_into().unwrap()
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads `file` (if any), applies `overrides` (`section.key=value`),
    /// fills command-specific defaults, range-checks the sections the
    /// command uses and resolves relative paths against the file's
    /// directory (or the working directory).
    pub fn load(command: Command, file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let (text, base_dir) = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (text, dir)
            }
            None => (String::new(), PathBuf::new()),
        };
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        let base_dir = if base_dir.is_absolute() { base_dir } else { cwd.join(base_dir) };
        Self::parse(command, &text, overrides, &base_dir)
    }

    pub fn parse(command: Command, text: &str, overrides: &[String], base_dir: &Path) -> Result<RunConfig> {
        let mut errors = Vec::new();
        let mut root: Table = match toml::from_str(text) {
            Ok(t) => t,
            Err(e) => return Err(Error::Config(vec![format!("malformed configuration: {}", clean_toml_error(e))])),
        };
        for o in overrides {
            let Some((path, raw)) = o.split_once('=') else {
                errors.push(format!("override '{o}' is not of the form section.key=value"));
                continue;
            };
            let Some((section, key)) = path.trim().split_once('.') else {
                errors.push(format!("override '{o}' must name a section: section.key=value"));
                continue;
            };
            let entry = root.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(key.to_string(), parse_override_value(raw.trim()));
                }
                _ => errors.push(format!("'{section}' is not a section")),
            }
        }
        let mut sections = std::collections::BTreeMap::new();
        for (k, v) in root {
            match (SECTIONS.contains(&k.as_str()), normalize(v)) {
                (true, Value::Table(t)) => {
                    sections.insert(k, t);
                }
                (true, _) => errors.push(format!("'{k}' must be a section")),
                (false, _) => errors.push(format!("unknown key or section '{k}'")),
            }
        }
        let sec = |name: &str| sections.get(name);

        let run: RunSection = overlay(&RunSection::default(), sec("run"), "run", &mut errors);
        let continuity_kind = sec("continuity")
            .and_then(|t| t.get("norm_kind"))
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<NormKind>().ok())
            .unwrap_or(NormKind::Holder);
        let sweep_defaults = match continuity_kind {
            NormKind::Holder => ContinuitySweepConfig::default_holder(),
            NormKind::Zygmund => ContinuitySweepConfig::default_zygmund(),
        };
        let solver_default = match command {
            Command::Continuity => sweep_defaults.solver.clone(),
            _ => SolverSettings::default(),
        };
        let solver: SolverSettings = overlay(&solver_default, sec("solver"), "solver", &mut errors);
        let simulate: SimulateSection = overlay(&SimulateSection::default(), sec("simulate"), "simulate", &mut errors);
        let continuity: ContinuitySection = overlay(
            &ContinuitySection::from_sweep(&sweep_defaults),
            sec("continuity"),
            "continuity",
            &mut errors,
        );
        let case = sec("convergence")
            .and_then(|t| t.get("case"))
            .and_then(Value::as_str)
            .and_then(|s| s.parse::<ConvergenceCase>().ok())
            .unwrap_or(ConvergenceCase::RadialEulerStationary);
        let convergence: ConvergenceConfig =
            overlay(&ConvergenceConfig::default_for(case), sec("convergence"), "convergence", &mut errors);
        let norms: NormsSection = overlay(&NormsSection::default(), sec("norms"), "norms", &mut errors);
        let sio: SioSection = overlay(&SioSection::default(), sec("sio"), "sio", &mut errors);
        let lemmas: LemmasSection = overlay(&LemmasSection::default(), sec("lemmas"), "lemmas", &mut errors);
        let kernels: KernelsSection = overlay(&KernelsSection::default(), sec("kernels"), "kernels", &mut errors);

        let mut cfg = RunConfig {
            command,
            run,
            solver,
            simulate,
            continuity,
            convergence,
            norms,
            sio,
            lemmas,
            kernels,
        };
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            match v.trim().parse::<usize>() {
                Ok(w) => cfg.run.worker_count = w,
                Err(_) => errors.push(format!("{WORKERS_ENV} must be a nonnegative integer, got '{v}'")),
            }
        }
        if errors.is_empty() {
            errors.extend(cfg.problems());
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        cfg.run.output_dir = resolve(base_dir, &cfg.run.output_dir);
        if let Rho0Spec::Csv { path, .. } = &mut cfg.simulate.rho0 {
            *path = resolve(base_dir, path);
        }
        cfg.norms.input = resolve(base_dir, &cfg.norms.input);
        Ok(cfg)
    }

    /// Range problems of the sections this command uses.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let gamma_ok = |g: f64| g > 0.0 && g < 1.0;
        match self.command {
            Command::Simulate => {
                out.extend(self.solver.problems().into_iter().map(|p| format!("[solver] {p}")));
                let s = &self.simulate;
                match &s.rho0 {
                    Rho0Spec::Preset(p) => {
                        if let Err(e) = p.validate() {
                            out.push(format!("[simulate] rho0: {e}"));
                        }
                    }
                    Rho0Spec::Csv { path, .. } if path.as_os_str().is_empty() => {
                        out.push("[simulate] rho0: csv path is empty".into())
                    }
                    Rho0Spec::Csv { .. } => {}
                }
                if s.checkpoint_times.iter().any(|t| !(*t >= 0.0 && *t <= self.solver.t_final)) {
                    out.push("[simulate] checkpoint_times must lie in [0, T]".into());
                }
                if let Some(e) = s.domain_extent {
                    if !(e > 0.0) {
                        out.push("[simulate] domain_extent must be positive".into());
                    }
                }
            }
            Command::Continuity => {
                out.extend(
                    self.continuity
                        .sweep(&self.solver)
                        .problems()
                        .into_iter()
                        .map(|p| format!("[continuity] {p}")),
                );
            }
            Command::Convergence => {
                out.extend(self.convergence.problems().into_iter().map(|p| format!("[convergence] {p}")));
            }
            Command::Norms => {
                if self.norms.input.as_os_str().is_empty() {
                    out.push("[norms] input: a CSV path is required".into());
                }
                if !gamma_ok(self.norms.gamma) {
                    out.push(format!("[norms] gamma must lie in the open interval (0, 1), got {}", self.norms.gamma));
                }
                if self.norms.pair_budget < 2 {
                    out.push("[norms] pair_budget must be at least 2".into());
                }
                if self.norms.h_levels.iter().any(|h| !(*h > 0.0)) {
                    out.push("[norms] h_levels must be positive".into());
                }
            }
            Command::ValidateSio => {
                let s = &self.sio;
                match crate::kernels::KernelSpec::from_name(&s.kernel) {
                    Ok(k) => {
                        if s.i >= k.dim() || s.j >= k.dim() {
                            out.push(format!("[sio] component ({}, {}) out of range for {}", s.i, s.j, s.kernel));
                        }
                    }
                    Err(e) => out.push(format!("[sio] {e}")),
                }
                if !gamma_ok(s.gamma) {
                    out.push(format!("[sio] gamma must lie in the open interval (0, 1), got {}", s.gamma));
                }
                if !(s.h > 0.0) {
                    out.push(format!("[sio] h must be positive, got {}", s.h));
                }
                if let Some(e) = s.epsilon {
                    if !(e >= s.h) {
                        out.push(format!("[sio] epsilon must be at least h, got {e}"));
                    }
                }
                let known = crate::experiments::SIO_FIELD_NAMES;
                for f in &s.fields {
                    if !known.contains(&f.as_str()) {
                        out.push(format!("[sio] unknown field '{f}' (expected one of {})", known.join(", ")));
                    }
                }
            }
            Command::Lemmas => {
                if !gamma_ok(self.lemmas.gamma) {
                    out.push(format!("[lemmas] gamma must lie in the open interval (0, 1), got {}", self.lemmas.gamma));
                }
            }
            Command::ValidateKernels => {
                for k in &self.kernels.kernels {
                    if let Err(e) = crate::kernels::KernelSpec::from_name(k) {
                        out.push(format!("[kernels] {e}"));
                    }
                }
                if self.kernels.quadrature_order < 4 {
                    out.push("[kernels] quadrature_order must be at least 4".into());
                }
                if !(self.kernels.kernel_sign.is_finite() && self.kernels.kernel_sign != 0.0) {
                    out.push("[kernels] kernel_sign must be finite and nonzero".into());
                }
            }
        }
        out
    }

    /// The configuration as TOML, sufficient to reproduce the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(cmd: Command, text: &str, o: &[&str]) -> Result<RunConfig> {
        let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
        RunConfig::parse(cmd, text, &o, Path::new("/base"))
    }

    fn problems(r: Result<RunConfig>) -> Vec<String> {
        match r {
            Err(Error::Config(p)) => p,
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_is_accepted() {
        let c = parse(
            Command::Simulate,
            "[solver]\nkernel = \"biot-savart-2d\"\ngamma = 0.5\nh = \"1/32\"\ndt = 1e-3\nT = 0.5\n",
            &[],
        )
        .unwrap();
        assert_eq!(c.solver.h, 1.0 / 32.0);
        assert_eq!(c.run.seed, 0);
        assert_eq!(c.run.output_dir, PathBuf::from("/base/out"));
    }

    #[test]
    fn gamma_one_is_rejected_with_interval_message() {
        let p = problems(parse(Command::Simulate, "[solver]\ngamma = 1.0\n", &[]));
        assert!(p.iter().any(|m| m.contains("open interval (0, 1)")), "{p:?}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = problems(parse(Command::Simulate, "[solver]\nkernel = \"qg-3d\"\nn = 2\n", &[]));
        assert!(p.iter().any(|m| m.contains("3-dimensional")), "{p:?}");
    }

    #[test]
    fn all_problems_are_aggregated() {
        let p = problems(parse(
            Command::Simulate,
            "bogus = 1\n[solver]\nh = \"wide\"\nfoo = 3\n[run]\nseed = -1\n",
            &[],
        ));
        assert_eq!(p.len(), 4, "{p:?}");
        assert!(p.iter().any(|m| m.contains("bogus")));
        assert!(p.iter().any(|m| m.contains("[solver] foo")));
        assert!(p.iter().any(|m| m.contains("[solver] h")));
        assert!(p.iter().any(|m| m.contains("[run] seed")));
    }

    #[test]
    fn overrides_apply_and_parse_values() {
        let c = parse(
            Command::Simulate,
            "[solver]\ndt = 0.1\n",
            &["solver.dt=0.05", "solver.kernel=grad-newtonian-2d", "simulate.checkpoint_times=[0.1, 0.2]"],
        )
        .unwrap();
        assert_eq!(c.solver.dt, 0.05);
        assert_eq!(c.solver.kernel, "grad-newtonian-2d");
        assert_eq!(c.simulate.checkpoint_times, vec![0.1, 0.2]);
        assert!(problems(parse(Command::Simulate, "", &["dt=1"]))[0].contains("section"));
    }

    #[test]
    fn zygmund_sweep_gets_its_own_defaults() {
        let c = parse(Command::Continuity, "[continuity]\nnorm_kind = \"zygmund\"\n", &[]).unwrap();
        assert!(matches!(c.continuity.base, Profile::Cusp { .. }));
        assert_eq!(c.solver.h, 1.0 / 16.0);
    }

    #[test]
    fn csv_rho0_and_paths_resolve() {
        let c = parse(Command::Simulate, "[simulate]\nrho0 = { kind = \"csv\", path = \"rho.csv\" }\n", &[]).unwrap();
        assert_eq!(
            c.simulate.rho0,
            Rho0Spec::Csv {
                kind: CsvTag::Csv,
                path: PathBuf::from("/base/rho.csv")
            }
        );
    }

    #[test]
    fn config_echo_round_trips() {
        let c = parse(Command::Convergence, "[convergence]\ncase = \"qg-radial-stationary\"\n", &[]).unwrap();
        assert_eq!(c.convergence.h_list.len(), 3);
        let echo: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(echo, c);
    }

    #[test]
    fn unused_sections_are_not_range_checked() {
        assert!(parse(Command::Lemmas, "[solver]\ngamma = 2.0\n", &[]).is_ok());
    }
}
