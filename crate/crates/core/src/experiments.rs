//! Well-posedness harness: perturbation sweeps of the map `ρ₀ ↦ ρ` in
//! Hölder and Zygmund norms, convergence studies on exact-solution cases,
//! and the consolidated inequality suite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Profile;
use crate::flow::{
    flow_distance, FlowProblem, FlowState, HaltReason, Integrator, MarkerLattice, SimulationConfig, TrajectoryRecord,
};
use crate::function_spaces::inequalities::{
    verify_holder_inequalities, verify_zygmund_inequalities, InequalityReport, RatioSummary, RATIO_BOUND,
    REFINEMENT_FACTOR,
};
use crate::function_spaces::{holder_norm, zygmund_norm, SampledField, DEFAULT_PAIR_BUDGET};
use crate::kernels::{dirac_correction, Builtin, KernelSpec};
use crate::lattice::Lattice;
use crate::singular_integrals::{estimate_sio_constants, PVConfig, SingularCellRule};
use crate::stats::{observed_orders, power_fit, spearman};

/// Discretization and kernel settings shared by every solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub kernel: String,
    pub kernel_sign: f64,
    pub n: usize,
    pub gamma: f64,
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub integrator: Integrator,
    pub delta: f64,
    pub singular_cell_rule: SingularCellRule,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub picard_damping: f64,
    pub pair_budget: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            kernel: Builtin::BiotSavart2d.name().to_string(),
            kernel_sign: 1.0,
            n: 2,
            gamma: 0.5,
            h: 1.0 / 32.0,
            dt: 1e-3,
            t_final: 0.5,
            integrator: Integrator::Rk4,
            delta: crate::flow::DEFAULT_DELTA,
            singular_cell_rule: SingularCellRule::Exclude,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            picard_damping: 1.0,
            pair_budget: DEFAULT_PAIR_BUDGET,
        }
    }
}

impl SolverSettings {
    /// Every range problem, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match KernelSpec::from_name(&self.kernel) {
            Ok(k) if k.dim() != self.n => out.push(format!(
                "kernel '{}' is {}-dimensional but n = {}",
                self.kernel,
                k.dim(),
                self.n
            )),
            Ok(_) => {}
            Err(e) => out.push(e.to_string()),
        }
        if !(self.n == 2 || self.n == 3) {
            out.push(format!("n must be 2 or 3, got {}", self.n));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma must lie in the open interval (0, 1), got {}", self.gamma));
        }
        for (name, v) in [("h", self.h), ("dt", self.dt), ("T", self.t_final)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.delta > 0.0) {
            out.push(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.kernel_sign.is_finite() && self.kernel_sign != 0.0) {
            out.push(format!("kernel_sign must be finite and nonzero, got {}", self.kernel_sign));
        }
        if !(self.picard_tol > 0.0) {
            out.push("picard_tol must be positive".into());
        }
        if self.picard_max_iter == 0 {
            out.push("picard_max_iter must be at least 1".into());
        }
        if !(self.picard_damping > 0.0 && self.picard_damping <= 1.0) {
            out.push("picard_damping must lie in (0, 1]".into());
        }
        if self.pair_budget < 2 {
            out.push("pair_budget must be at least 2".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::from_name(&self.kernel)?.with_sign(self.kernel_sign)
    }

    pub fn problem(&self, markers: MarkerLattice) -> Result<FlowProblem> {
        Ok(FlowProblem::new(markers, self.kernel_spec()?)?
            .with_delta(self.delta)
            .with_rule(self.singular_cell_rule)
            .with_pair_budget(self.pair_budget))
    }

    pub fn simulation(&self, checkpoint_times: &[f64], snapshot_every: usize) -> SimulationConfig {
        SimulationConfig {
            integrator: self.integrator,
            dt: self.dt,
            t_final: self.t_final,
            picard_tol: self.picard_tol,
            picard_max_iter: self.picard_max_iter,
            picard_damping: self.picard_damping,
            checkpoint_times: checkpoint_times.to_vec(),
            snapshot_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    #[default]
    Holder,
    Zygmund,
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "holder" => Ok(NormKind::Holder),
            "zygmund" => Ok(NormKind::Zygmund),
            other => Err(Error::domain(format!("unknown norm kind '{other}' (expected holder or zygmund)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuitySweepConfig {
    pub solver: SolverSettings,
    pub base: Profile,
    pub perturbation: Profile,
    /// Nonnegative and strictly decreasing.
    pub epsilons: Vec<f64>,
    pub norm_kind: NormKind,
    /// Output distances are maximised over these times (`T` is always
    /// included).
    pub checkpoint_times: Vec<f64>,
    /// Spacing of the shared comparison lattice (defaults to `h`).
    pub eval_spacing: Option<f64>,
}

fn dyadic_epsilons() -> Vec<f64> {
    (2..=6).map(|k| 2f64.powi(-k)).collect()
}

impl ContinuitySweepConfig {
    /// Biot-Savart, radial Gaussian base, off-centre bump perturbation.
    pub fn default_holder() -> Self {
        ContinuitySweepConfig {
            solver: SolverSettings {
                h: 1.0 / 16.0,
                dt: 0.05,
                t_final: 0.25,
                ..SolverSettings::default()
            },
            base: Profile::Gaussian {
                amplitude: 1.0,
                sigma: 0.2,
                radius: 0.5,
                center: vec![],
            },
            perturbation: Profile::Bump {
                amplitude: 1.0,
                radius: 0.2,
                center: vec![0.15, 0.1],
            },
            epsilons: dyadic_epsilons(),
            norm_kind: NormKind::Holder,
            checkpoint_times: vec![0.125, 0.25],
            eval_spacing: None,
        }
    }

    /// Mollified cusp base (Zygmund seminorm well above its smooth part).
    pub fn default_zygmund() -> Self {
        ContinuitySweepConfig {
            base: Profile::Cusp {
                amplitude: 1.0,
                radius: 0.5,
                mollification: 0.05,
                center: vec![],
            },
            norm_kind: NormKind::Zygmund,
            ..Self::default_holder()
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.solver.problems();
        if self.epsilons.is_empty() {
            out.push("epsilons must not be empty".into());
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            out.push("epsilons must be nonnegative".into());
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            out.push("epsilons must be strictly decreasing".into());
        }
        for (name, p) in [("base", &self.base), ("perturbation", &self.perturbation)] {
            if let Err(e) = p.validate() {
                out.push(format!("{name}: {e}"));
            }
        }
        if self.checkpoint_times.iter().any(|t| !(*t > 0.0 && *t <= self.solver.t_final)) {
            out.push("checkpoint_times must lie in (0, T]".into());
        }
        if let Some(s) = self.eval_spacing {
            if !(s > 0.0) {
                out.push("eval_spacing must be positive".into());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub input_distance: f64,
    pub output_distance: f64,
    pub flow_distance: f64,
    pub admissible_to_t: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub norm_kind: NormKind,
    pub rows: Vec<SweepRow>,
    /// Fitted exponent of `output ≈ C·input^β` over admissible rows with
    /// positive distances.
    pub beta: Option<f64>,
    pub r_squared: Option<f64>,
    /// Rank correlation of flow and output distances.
    pub spearman: Option<f64>,
    /// Output distance strictly decreases with `ε` over admissible rows.
    pub monotone: bool,
}

struct Run {
    record: TrajectoryRecord,
    states: Vec<FlowState>,
}

fn run_for(cfg: &ContinuitySweepConfig, lattice: &Lattice, rho0: Vec<f64>, times: &[f64]) -> Result<(FlowProblem, Run)> {
    let markers = MarkerLattice::new(lattice.clone(), rho0, cfg.solver.gamma)?;
    let problem = cfg.solver.problem(markers)?;
    let record = problem.simulate(&cfg.solver.simulation(times, 0))?;
    let states = record.checkpoints.iter().map(|c| c.state.clone()).collect();
    Ok((problem, Run { record, states }))
}

fn distance(kind: NormKind, field: &SampledField, gamma: f64, budget: usize) -> Result<f64> {
    match kind {
        NormKind::Holder => holder_norm(field, gamma, budget),
        NormKind::Zygmund => zygmund_norm(field),
    }
}

/// Runs the solver on `ρ₀ + ε·φ` for every `ε` with identical
/// discretization and compares against the unperturbed run on a shared
/// lattice.
pub fn continuity_sweep(cfg: &ContinuitySweepConfig) -> Result<SweepReport> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let s = &cfg.solver;
    let n = s.n;
    let margin = crate::flow::MARGIN_LAYERS as f64 * s.h;
    let extent = cfg.base.support_extent().max(cfg.perturbation.support_extent()).max(s.h) + margin + 1e-9 * s.h;
    let lattice = Lattice::covering(n, s.h, extent)?;
    let points = lattice.points();
    let base: Vec<f64> = points.chunks_exact(n).map(|x| cfg.base.eval(x)).collect();
    let phi: Vec<f64> = points.chunks_exact(n).map(|x| cfg.perturbation.eval(x)).collect();

    let eval = Lattice::covering(n, cfg.eval_spacing.unwrap_or(s.h), lattice.extent())?;
    let eval_points = eval.points();
    let phi_eval: Vec<f64> = eval_points.chunks_exact(n).map(|x| cfg.perturbation.eval(x)).collect();
    let base_eval: Vec<f64> = eval_points.chunks_exact(n).map(|x| cfg.base.eval(x)).collect();

    let mut times = cfg.checkpoint_times.clone();
    if !times.iter().any(|t| (t - s.t_final).abs() <= 1e-12 * s.t_final) {
        times.push(s.t_final);
    }
    let (base_problem, base_run) = run_for(cfg, &lattice, base, &times)?;
    if base_run.record.halt != HaltReason::Completed {
        return Err(Error::Inadmissible(format!(
            "unperturbed run did not reach T: {}",
            base_run.record.halt_detail
        )));
    }
    let base_fields: Vec<Vec<f64>> = base_run
        .states
        .iter()
        .map(|st| base_problem.reconstruct_density(st, &eval_points))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let rho0: Vec<f64> = base_run_rho(&base_problem, &phi, eps);
        let input: Vec<f64> = base_eval.iter().zip(&phi_eval).map(|(b, p)| (b + eps * p) - b).collect();
        let input_distance = distance(cfg.norm_kind, &SampledField::on_lattice(eval.clone(), input)?, s.gamma, s.pair_budget)?;
        let (problem, run) = run_for(cfg, &lattice, rho0, &times)?;
        let mut output_distance = 0.0f64;
        let mut flow_dist = 0.0f64;
        for (k, st) in run.states.iter().enumerate() {
            let rho = problem.reconstruct_density(st, &eval_points)?;
            let diff: Vec<f64> = rho.iter().zip(&base_fields[k]).map(|(a, b)| a - b).collect();
            let field = SampledField::on_lattice(eval.clone(), diff)?;
            output_distance = output_distance.max(distance(cfg.norm_kind, &field, s.gamma, s.pair_budget)?);
            flow_dist = flow_dist.max(flow_distance(&lattice, st, &base_run.states[k], s.gamma, s.pair_budget)?);
        }
        rows.push(SweepRow {
            epsilon: eps,
            input_distance,
            output_distance,
            flow_distance: flow_dist,
            admissible_to_t: run.record.halt == HaltReason::Completed,
        });
    }

    let good: Vec<&SweepRow> = rows.iter().filter(|r| r.admissible_to_t).collect();
    let fit_rows: Vec<&&SweepRow> = good
        .iter()
        .filter(|r| r.input_distance > 0.0 && r.output_distance > 0.0)
        .collect();
    let fit = power_fit(
        &fit_rows.iter().map(|r| r.input_distance).collect::<Vec<_>>(),
        &fit_rows.iter().map(|r| r.output_distance).collect::<Vec<_>>(),
    );
    let rho = spearman(
        &good.iter().map(|r| r.flow_distance).collect::<Vec<_>>(),
        &good.iter().map(|r| r.output_distance).collect::<Vec<_>>(),
    );
    let monotone = good.windows(2).all(|w| w[1].output_distance < w[0].output_distance);
    Ok(SweepReport {
        norm_kind: cfg.norm_kind,
        rows,
        beta: fit.map(|f| f.slope),
        r_squared: fit.map(|f| f.r_squared),
        spearman: rho,
        monotone,
    })
}

fn base_run_rho(base: &FlowProblem, phi: &[f64], eps: f64) -> Vec<f64> {
    base.markers.rho0().iter().zip(phi).map(|(b, p)| b + eps * p).collect()
}

/// Sweep in the Zygmund norm; the configuration's norm kind is overridden.
pub fn zygmund_sweep(cfg: &ContinuitySweepConfig) -> Result<SweepReport> {
    let mut c = cfg.clone();
    c.norm_kind = NormKind::Zygmund;
    continuity_sweep(&c)
}

/// Exact-solution cases for convergence studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceCase {
    /// Biot-Savart, radial Gaussian: stationary density.
    RadialEulerStationary,
    /// `∇N` in 2D on a mollified disk: plateau radii grow like `e^{t/n}`.
    GradnPatchExponential,
    /// Quasi-geostrophic kernel, radial Gaussian: stationary density.
    QgRadialStationary,
}

impl ConvergenceCase {
    pub const ALL: [ConvergenceCase; 3] = [
        ConvergenceCase::RadialEulerStationary,
        ConvergenceCase::GradnPatchExponential,
        ConvergenceCase::QgRadialStationary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConvergenceCase::RadialEulerStationary => "radial-euler-stationary",
            ConvergenceCase::GradnPatchExponential => "gradn-patch-exponential",
            ConvergenceCase::QgRadialStationary => "qg-radial-stationary",
        }
    }

    pub fn kernel(self) -> Builtin {
        match self {
            ConvergenceCase::RadialEulerStationary => Builtin::BiotSavart2d,
            ConvergenceCase::GradnPatchExponential => Builtin::GradNewtonian2d,
            ConvergenceCase::QgRadialStationary => Builtin::Qg3d,
        }
    }

    pub fn profile(self) -> Profile {
        match self {
            ConvergenceCase::GradnPatchExponential => Profile::MollifiedDisk {
                amplitude: 1.0,
                radius: 0.3,
                width: 0.1,
                center: vec![],
            },
            ConvergenceCase::QgRadialStationary => Profile::Gaussian {
                amplitude: 1.0,
                sigma: 0.25,
                radius: 0.625,
                center: vec![],
            },
            ConvergenceCase::RadialEulerStationary => Profile::Gaussian {
                amplitude: 1.0,
                sigma: 0.2,
                radius: 0.5,
                center: vec![],
            },
        }
    }
}

impl std::str::FromStr for ConvergenceCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ConvergenceCase::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::domain(format!(
                    "unknown convergence case '{s}' (expected one of {})",
                    ConvergenceCase::ALL.map(|c| c.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub case: ConvergenceCase,
    /// Decreasing spacings for the spatial study, each run at `space_dt`.
    pub h_list: Vec<f64>,
    /// Successively halved steps for the temporal self-convergence study.
    pub dt_list: Vec<f64>,
    pub space_dt: f64,
    /// Spacing of the temporal study.
    pub time_h: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub gamma: f64,
}

impl ConvergenceConfig {
    pub fn default_for(case: ConvergenceCase) -> Self {
        let (h_list, time_h, space_dt) = match case {
            ConvergenceCase::QgRadialStationary => (vec![1.0 / 8.0, 1.0 / 12.0, 1.0 / 16.0], 1.0 / 8.0, 0.1),
            _ => (vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0], 1.0 / 16.0, 0.05),
        };
        ConvergenceConfig {
            case,
            h_list,
            dt_list: vec![0.1, 0.05, 0.025, 0.0125],
            space_dt,
            time_h,
            t_final: 1.0,
            gamma: 0.5,
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.h_list.len() < 2 || self.h_list.windows(2).any(|w| !(w[1] < w[0])) || self.h_list.iter().any(|h| !(*h > 0.0)) {
            out.push("h_list needs at least two positive, strictly decreasing spacings".into());
        }
        if self.dt_list.len() < 3 || self.dt_list.iter().any(|d| !(*d > 0.0)) {
            out.push("dt_list needs at least three positive steps".into());
        }
        if self.dt_list.windows(2).any(|w| (w[0] / w[1] - 2.0).abs() > 1e-9) {
            out.push("dt_list must halve at each entry".into());
        }
        for (name, v) in [("space_dt", self.space_dt), ("time_h", self.time_h), ("T", self.t_final)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            out.push(format!("gamma must lie in the open interval (0, 1), got {}", self.gamma));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub study: String,
    pub h: f64,
    pub dt: f64,
    pub error: f64,
    /// Observed order against the previous row of the same study.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub case: ConvergenceCase,
    pub rows: Vec<ConvergenceRow>,
    /// Log-log slope of error against `h`.
    pub spatial_order: Option<f64>,
    pub spatial_r_squared: Option<f64>,
    /// Smallest successive self-convergence order in `dt`.
    pub temporal_order: Option<f64>,
    /// Fitted exponential growth rate of the mean plateau radius at the
    /// finest `h` (patch case only).
    pub patch_rate: Option<f64>,
    pub monotone_space: bool,
    pub monotone_time: bool,
    pub passed: bool,
}

pub const MIN_SPATIAL_ORDER: f64 = 0.9;
pub const MIN_TEMPORAL_ORDER: f64 = 3.5;
pub const PATCH_RATE_TOL: f64 = 0.01;

fn case_problem(case: ConvergenceCase, h: f64, gamma: f64) -> Result<FlowProblem> {
    let b = case.kernel();
    let markers = MarkerLattice::from_profile(b.dim(), h, &case.profile(), gamma)?;
    // exact-solution runs are long compared to the local existence time
    Ok(FlowProblem::new(markers, KernelSpec::builtin(b))?.with_delta(f64::INFINITY))
}

/// `‖ρ(·,T) - ρ₀‖_∞` on a fixed lattice independent of `h`.
fn stationary_drift(problem: &FlowProblem, state: &FlowState, profile: &Profile) -> Result<f64> {
    let n = problem.markers.dim();
    let eval = Lattice::covering(n, 1.0 / 23.0, profile.support_extent())?;
    let pts = eval.points();
    let rho = problem.reconstruct_density(state, &pts)?;
    Ok(pts
        .chunks_exact(n)
        .zip(&rho)
        .map(|(x, r)| (r - profile.eval(x)).abs())
        .fold(0.0, f64::max)
        / profile.amplitude().abs())
}

/// Mean distance from the origin of the plateau markers (`ρ₀ = max ρ₀`).
pub fn plateau_mean_radius(problem: &FlowProblem, state: &FlowState) -> f64 {
    let n = problem.markers.dim();
    let rho0 = problem.markers.rho0();
    let top = rho0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, r) in rho0.iter().enumerate() {
        if *r == top {
            sum += state.positions[i * n..(i + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt();
            count += 1;
        }
    }
    sum / count.max(1) as f64
}

/// Exponential rate of the mean plateau radius, fitted over the run.
fn patch_rate(problem: &FlowProblem, record: &TrajectoryRecord) -> Option<f64> {
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for c in &record.checkpoints {
        ts.push(c.state.t);
        logs.push(plateau_mean_radius(problem, &c.state).ln());
    }
    crate::stats::linear_fit(&ts, &logs).map(|f| f.slope)
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let problems = cfg.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let case = cfg.case;
    let n = case.kernel().dim() as f64;
    let profile = case.profile();
    let mut rows = Vec::new();
    let mut space_errors = Vec::new();
    let mut rate = None;
    for &h in &cfg.h_list {
        let problem = case_problem(case, h, cfg.gamma)?;
        let mut sim = SimulationConfig::new(cfg.space_dt, cfg.t_final);
        if case == ConvergenceCase::GradnPatchExponential {
            sim.checkpoint_times = (0..=10).map(|k| cfg.t_final * k as f64 / 10.0).collect();
        }
        let record = problem.simulate(&sim)?;
        if record.halt != HaltReason::Completed {
            return Err(Error::Inadmissible(record.halt_detail));
        }
        let error = match case {
            ConvergenceCase::GradnPatchExponential => {
                let r = patch_rate(&problem, &record).unwrap_or(f64::NAN);
                rate = Some(r);
                ((r - 1.0 / n) * n).abs()
            }
            _ => stationary_drift(&problem, &record.final_state, &profile)?,
        };
        space_errors.push(error);
        rows.push(ConvergenceRow {
            study: "space".into(),
            h,
            dt: cfg.space_dt,
            error,
            order: None,
        });
    }
    let h_ratio: Vec<f64> = cfg.h_list.windows(2).map(|w| w[0] / w[1]).collect();
    for k in 1..space_errors.len() {
        rows[k].order = Some((space_errors[k - 1] / space_errors[k]).ln() / h_ratio[k - 1].ln());
    }
    let fit = power_fit(&cfg.h_list, &space_errors);
    let monotone_space = space_errors.windows(2).all(|w| w[1] < w[0]);

    let problem = case_problem(case, cfg.time_h, cfg.gamma)?;
    let mut finals = Vec::new();
    for &dt in &cfg.dt_list {
        let record = problem.simulate(&SimulationConfig::new(dt, cfg.t_final))?;
        if record.halt != HaltReason::Completed {
            return Err(Error::Inadmissible(record.halt_detail));
        }
        finals.push(record.final_state.positions);
    }
    let diffs: Vec<f64> = finals
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .collect();
    let orders = observed_orders(&diffs, 2.0);
    for (k, d) in diffs.iter().enumerate() {
        rows.push(ConvergenceRow {
            study: "time".into(),
            h: cfg.time_h,
            dt: cfg.dt_list[k + 1],
            error: *d,
            order: (k > 0).then(|| orders[k - 1]),
        });
    }
    let temporal_order = orders.iter().copied().reduce(f64::min);
    let monotone_time = diffs.windows(2).all(|w| w[1] < w[0]);

    let spatial_ok = match case {
        ConvergenceCase::GradnPatchExponential => space_errors.last().is_some_and(|e| *e <= PATCH_RATE_TOL),
        _ => fit.is_some_and(|f| f.slope >= MIN_SPATIAL_ORDER),
    };
    let passed = monotone_space && monotone_time && spatial_ok && temporal_order.is_some_and(|o| o >= MIN_TEMPORAL_ORDER);
    Ok(ConvergenceReport {
        case,
        rows,
        spatial_order: fit.map(|f| f.slope),
        spatial_r_squared: fit.map(|f| f.r_squared),
        temporal_order,
        patch_rate: rate,
        monotone_space,
        monotone_time,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracCheck {
    pub kernel: String,
    pub c_matrix: Vec<Vec<f64>>,
    pub trace: f64,
    pub expected_trace: f64,
    pub estimated_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub gamma: f64,
    pub inequality_suites: Vec<InequalityReport>,
    /// Empirical constants of the singular-integral bounds on a coarse
    /// and a refined lattice.
    pub sio_ratios: Vec<RatioSummary>,
    pub dirac: Vec<DiracCheck>,
    pub passed: bool,
}

/// Test family for the singular-integral constants: compactly supported
/// profiles of varied shape and regularity, sampled on `dim`-dimensional
/// lattices of spacing `h`.
pub fn sio_family(dim: usize, h: f64) -> Result<Vec<(String, SampledField)>> {
    let profiles = [
        ("gaussian", Profile::Gaussian { amplitude: 1.0, sigma: 0.25, radius: 0.6, center: vec![] }),
        ("bump", Profile::Bump { amplitude: 1.0, radius: 0.5, center: vec![0.1, -0.05] }),
        ("cusp", Profile::Cusp { amplitude: 1.0, radius: 0.5, mollification: 0.05, center: vec![] }),
        ("ring", Profile::Ring { amplitude: 1.0, radius: 0.4, width: 0.15, center: vec![] }),
        ("disk", Profile::MollifiedDisk { amplitude: 1.0, radius: 0.4, width: 0.1, center: vec![] }),
    ];
    profiles
        .into_iter()
        .map(|(name, p)| {
            let lat = Lattice::covering(dim, h, p.support_extent() + 2.0 * h)?;
            Ok((name.to_string(), SampledField::sample(lat, |x| p.eval(x))?))
        })
        .collect()
}

pub const SIO_FIELD_NAMES: [&str; 5] = ["gaussian", "bump", "cusp", "ring", "disk"];

pub const SIO_COARSE_H: f64 = 1.0 / 16.0;

fn sio_ratios(gamma: f64) -> Result<Vec<RatioSummary>> {
    let kernel = KernelSpec::builtin(Builtin::BiotSavart2d);
    let coarse = SIO_COARSE_H;
    let fine = coarse / 2.0;
    let mut out = Vec::new();
    for (i, j) in [(0, 1), (0, 0)] {
        let a = estimate_sio_constants(&kernel, i, j, &sio_family(2, coarse)?, gamma, &PVConfig::new(coarse))?;
        let b = estimate_sio_constants(&kernel, i, j, &sio_family(2, fine)?, gamma, &PVConfig::new(fine))?;
        for (name, x, y) in [
            ("SIOepsilon", a.max_c_eps, b.max_c_eps),
            ("SIOsna", a.max_c_sna, b.max_c_sna),
        ] {
            let stable = x > 0.0 && y > 0.0 && (y / x).max(x / y) <= REFINEMENT_FACTOR;
            out.push(RatioSummary {
                name: format!("{name}[{i}{j}]"),
                samples: a.rows.len(),
                max_ratio: x,
                max_ratio_refined: y,
                bound: RATIO_BOUND,
                stable,
                passed: stable && x <= RATIO_BOUND && y <= RATIO_BOUND,
            });
        }
    }
    Ok(out)
}

fn dirac_checks() -> Result<Vec<DiracCheck>> {
    Builtin::ALL
        .into_iter()
        .map(|b| {
            let k = KernelSpec::builtin(b);
            let c = dirac_correction(&k, 256)?;
            let n = b.dim();
            let expected_trace = if b.is_solenoidal() { 0.0 } else { 1.0 };
            let trace = c.trace();
            Ok(DiracCheck {
                kernel: b.name().to_string(),
                c_matrix: (0..n).map(|i| (0..n).map(|j| c.get(i, j)).collect()).collect(),
                trace,
                expected_trace,
                estimated_error: c.estimated_error,
                passed: (trace - expected_trace).abs() <= 1e-8,
            })
        })
        .collect()
}

/// Every inequality verifier plus the singular-integral constants and the
/// Dirac corrections, in one deterministic report. `trials = 0` gives an
/// empty, passing report.
pub fn lemma_suite(seed: u64, trials: usize, gamma: f64) -> Result<LemmaSuiteReport> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(vec![format!("gamma must lie in the open interval (0, 1), got {gamma}")]));
    }
    if trials == 0 {
        return Ok(LemmaSuiteReport {
            seed,
            trials,
            gamma,
            inequality_suites: Vec::new(),
            sio_ratios: Vec::new(),
            dirac: Vec::new(),
            passed: true,
        });
    }
    let inequality_suites = vec![
        verify_holder_inequalities(trials, gamma, seed)?,
        verify_zygmund_inequalities(trials, seed)?,
    ];
    let sio_ratios = sio_ratios(gamma)?;
    let dirac = dirac_checks()?;
    let passed = inequality_suites.iter().all(|r| r.passed)
        && sio_ratios.iter().all(|r| r.passed)
        && dirac.iter().all(|d| d.passed);
    Ok(LemmaSuiteReport {
        seed,
        trials,
        gamma,
        inequality_suites,
        sio_ratios,
        dirac,
        passed,
    })
}
