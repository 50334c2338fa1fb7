//! Lagrangian flow-map solver: the marker lattice, the velocity functional
//! `F(X)(α) = Σ k(X(α) - X(α')) ρ₀(α') det DX(α') hⁿ`, explicit RK4 and
//! trapezoidal Picard steps, admissibility monitoring and density
//! reconstruction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Profile;
use crate::function_spaces::{holder_seminorm, SampledField, DEFAULT_PAIR_BUDGET};
use crate::grid::CellGrid;
use crate::kernels::{KernelSpec, Parity};
use crate::lattice::Lattice;
use crate::nbody::Sources;
use crate::quadrature::homogeneous_box_integral;
use crate::singular_integrals::SingularCellRule;

/// Layers of zero density required around the support.
pub const MARGIN_LAYERS: usize = 2;
/// Default admissibility radius on the discrete `‖φ_X‖_{1,γ}`.
pub const DEFAULT_DELTA: f64 = 0.45;
/// `det DX` must stay above this for a state to be admissible.
pub const DET_FLOOR: f64 = 0.5;

/// Labelled markers on a regular lattice carrying `ρ₀(α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLattice {
    lattice: Lattice,
    rho0: Vec<f64>,
    gamma: f64,
    sources: Vec<usize>,
}

impl MarkerLattice {
    pub fn new(lattice: Lattice, rho0: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::domain(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if !(2..=3).contains(&lattice.dim()) {
            return Err(Error::domain("marker lattices are 2- or 3-dimensional"));
        }
        if rho0.len() != lattice.len() {
            return Err(Error::domain(format!("{} density values for {} markers", rho0.len(), lattice.len())));
        }
        if lattice.shape().iter().any(|&s| s < 2 * MARGIN_LAYERS + 1) {
            return Err(Error::domain("marker lattice too small for its zero margin"));
        }
        if let Some(v) = rho0.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite initial density {v}")));
        }
        if let Some(i) = (0..lattice.len()).find(|&i| lattice.is_margin(i, MARGIN_LAYERS) && rho0[i] != 0.0) {
            return Err(Error::domain(format!(
                "initial density must vanish on the {MARGIN_LAYERS}-cell margin (marker {i} has {})",
                rho0[i]
            )));
        }
        let sources = (0..rho0.len()).filter(|&i| rho0[i] != 0.0).collect();
        Ok(MarkerLattice {
            lattice,
            rho0,
            gamma,
            sources,
        })
    }

    /// Centred lattice just large enough to hold the profile's support plus
    /// the zero margin.
    pub fn from_profile(dim: usize, spacing: f64, profile: &Profile, gamma: f64) -> Result<Self> {
        profile.validate()?;
        let extent = profile.support_extent().max(spacing) + MARGIN_LAYERS as f64 * spacing + 1e-9 * spacing;
        let lattice = Lattice::covering(dim, spacing, extent)?;
        Self::from_fn(lattice, |x| profile.eval(x), gamma)
    }

    pub fn from_fn(lattice: Lattice, rho0: impl Fn(&[f64]) -> f64, gamma: f64) -> Result<Self> {
        let n = lattice.dim();
        let values = lattice.points().chunks_exact(n).map(rho0).collect();
        Self::new(lattice, values, gamma)
    }

    /// Same labels with a different initial density.
    pub fn with_rho0(&self, rho0: Vec<f64>) -> Result<Self> {
        Self::new(self.lattice.clone(), rho0, self.gamma)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn rho0(&self) -> &[f64] {
        &self.rho0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn spacing(&self) -> f64 {
        self.lattice.spacing()
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    /// Markers with nonzero `ρ₀`.
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    pub fn labels(&self) -> Vec<f64> {
        self.lattice.points()
    }
}

/// Positions and deformation data of all markers at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub positions: Vec<f64>,
    /// Row-major `n×n` Jacobian `∂X_a/∂α_b` per marker.
    pub dx: Vec<f64>,
    pub det: Vec<f64>,
    pub phi_norm: f64,
    pub delta: f64,
    pub min_det: f64,
    pub max_det: f64,
    pub admissible: bool,
}

impl FlowState {
    pub fn dim(&self) -> usize {
        let m = self.det.len().max(1);
        self.positions.len() / m
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.positions[i * n..(i + 1) * n]
    }
}

fn det_of(m: &[f64], n: usize) -> f64 {
    match n {
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => unreachable!(),
    }
}

/// Label-space finite differences of the positions: centred in the
/// interior, second-order one-sided on the lattice boundary. Returns
/// `(DX, det DX)`.
pub fn deformation_gradient(lattice: &Lattice, positions: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = lattice.dim();
    let shape = lattice.shape();
    let m = lattice.len();
    let inv2h = 0.5 / lattice.spacing();
    let mut strides = [1usize; 3];
    for b in (0..n.saturating_sub(1)).rev() {
        strides[b] = strides[b + 1] * shape[b + 1];
    }
    let mut dx = vec![0.0; m * n * n];
    let mut det = vec![0.0; m];
    dx.par_chunks_mut(n * n)
        .zip(det.par_iter_mut())
        .enumerate()
        .for_each(|(i, (jac, d))| {
            let idx = lattice.multi(i);
            let x = |j: usize, a: usize| positions[j * n + a];
            for b in 0..n {
                let s = strides[b];
                let (k, len) = (idx[b], shape[b]);
                for a in 0..n {
                    jac[a * n + b] = if k == 0 {
                        (-3.0 * x(i, a) + 4.0 * x(i + s, a) - x(i + 2 * s, a)) * inv2h
                    } else if k + 1 == len {
                        (3.0 * x(i, a) - 4.0 * x(i - s, a) + x(i - 2 * s, a)) * inv2h
                    } else {
                        (x(i + s, a) - x(i - s, a)) * inv2h
                    };
                }
            }
            *d = det_of(jac, n);
        });
    (dx, det)
}

/// Solves `M x = b` for a row-major `n×n` matrix by Cramer's rule.
fn solve(m: &[f64], b: &[f64], n: usize) -> Option<[f64; 3]> {
    let d = det_of(m, n);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for c in 0..n {
        let mut mc = [0.0; 9];
        mc[..n * n].copy_from_slice(m);
        for r in 0..n {
            mc[r * n + c] = b[r];
        }
        x[c] = det_of(&mc[..n * n], n) / d;
    }
    Some(x)
}

/// Tensor-product cubic Lagrange interpolation of lattice values at an
/// arbitrary label; nodes outside the lattice count as zero. Exact at nodes.
fn label_interp(lattice: &Lattice, values: &[f64], alpha: &[f64]) -> f64 {
    let n = lattice.dim();
    let h = lattice.spacing();
    let shape = lattice.shape();
    let mut base = [0i64; 3];
    let mut w = [[0.0; 4]; 3];
    for k in 0..n {
        let u = alpha[k] / h - lattice.offset()[k] as f64;
        let f = u.floor();
        let s = u - f;
        base[k] = f as i64 - 1;
        if s == 0.0 {
            w[k] = [0.0, 1.0, 0.0, 0.0];
        } else {
            w[k] = [
                -s * (s - 1.0) * (s - 2.0) / 6.0,
                (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
                -(s + 1.0) * s * (s - 2.0) / 2.0,
                (s + 1.0) * s * (s - 1.0) / 6.0,
            ];
        }
    }
    let count = 4usize.pow(n as u32);
    let mut acc = 0.0;
    'outer: for t in 0..count {
        let mut flat = 0usize;
        let mut weight = 1.0;
        let mut rest = t;
        for k in 0..n {
            let o = rest % 4;
            rest /= 4;
            let j = base[k] + o as i64;
            if w[k][o] == 0.0 || j < 0 || j >= shape[k] as i64 {
                continue 'outer;
            }
            weight *= w[k][o];
            flat = flat * shape[k] + j as usize;
        }
        acc += weight * values[flat];
    }
    acc
}

/// Discrete `‖φ_X‖_{1,γ} = sup|X - α| + sup|DX - I| + |DX|_γ`.
pub fn phi_norm(lattice: &Lattice, positions: &[f64], dx: &[f64], gamma: f64, pair_budget: usize) -> Result<f64> {
    let n = lattice.dim();
    let labels = lattice.points();
    let sup_phi = positions.iter().zip(&labels).fold(0.0f64, |m, (x, a)| m.max((x - a).abs()));
    let sup_dphi = dx
        .chunks_exact(n * n)
        .flat_map(|j| (0..n * n).map(move |e| (j[e] - if e % (n + 1) == 0 { 1.0 } else { 0.0 }).abs()))
        .fold(0.0f64, f64::max);
    let field = SampledField::on_lattice_vector(lattice.clone(), dx.to_vec(), n * n)?;
    Ok(sup_phi + sup_dphi + holder_seminorm(&field, gamma, pair_budget)?)
}

/// Discrete `‖X_a - X_b‖_{1,γ}` between two states on the same labels:
/// `sup|X_a - X_b| + sup|DX_a - DX_b| + |DX_a - DX_b|_γ`.
pub fn flow_distance(lattice: &Lattice, a: &FlowState, b: &FlowState, gamma: f64, pair_budget: usize) -> Result<f64> {
    let n = lattice.dim();
    if a.positions.len() != lattice.len() * n || b.positions.len() != a.positions.len() {
        return Err(Error::domain("flow states do not match the marker lattice"));
    }
    let sup = |x: &[f64], y: &[f64]| x.iter().zip(y).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    let ddx: Vec<f64> = a.dx.iter().zip(&b.dx).map(|(p, q)| p - q).collect();
    let field = SampledField::on_lattice_vector(lattice.clone(), ddx, n * n)?;
    Ok(sup(&a.positions, &b.positions) + sup(&a.dx, &b.dx) + holder_seminorm(&field, gamma, pair_budget)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    Picard,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Integrator::Rk4),
            "picard" => Ok(Integrator::Picard),
            other => Err(Error::domain(format!("unknown integrator '{other}' (expected rk4 or picard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardStats {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub integrator: Integrator,
    pub dt: f64,
    pub t_final: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Relaxation factor in `(0, 1]` for the Picard update.
    pub picard_damping: f64,
    pub checkpoint_times: Vec<f64>,
    /// Store positions and `det DX` every this many steps (0: never).
    pub snapshot_every: usize,
}

impl SimulationConfig {
    pub fn new(dt: f64, t_final: f64) -> Self {
        SimulationConfig {
            integrator: Integrator::Rk4,
            dt,
            t_final,
            picard_tol: 1e-12,
            picard_max_iter: 50,
            picard_damping: 1.0,
            checkpoint_times: Vec::new(),
            snapshot_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            problems.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            problems.push(format!("T must be positive, got {}", self.t_final));
        }
        if !(self.picard_tol > 0.0) {
            problems.push("picard_tol must be positive".to_string());
        }
        if self.picard_max_iter == 0 {
            problems.push("picard_max_iter must be at least 1".to_string());
        }
        if !(self.picard_damping > 0.0 && self.picard_damping <= 1.0) {
            problems.push("picard_damping must lie in (0, 1]".to_string());
        }
        if self.checkpoint_times.iter().any(|t| !(*t >= 0.0)) {
            problems.push("checkpoint times must be nonnegative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Number of steps; the last step is shortened to land on `T`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(1.0) as usize
    }

    fn time_of(&self, step: usize) -> f64 {
        (step as f64 * self.dt).min(self.t_final)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRow {
    pub step: usize,
    pub t: f64,
    pub min_det: f64,
    pub max_det: f64,
    pub phi_norm: f64,
    pub max_speed: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub requested_t: f64,
    pub step: usize,
    pub state: FlowState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub positions: Vec<f64>,
    pub det: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaltReason {
    Completed,
    /// The state left `U_δ` (`min det DX ≤ 1/2` or `‖φ_X‖ ≥ δ`).
    LeftAdmissibleSet,
    PicardRejected,
}

impl HaltReason {
    pub fn describe(self) -> &'static str {
        match self {
            HaltReason::Completed => "completed",
            HaltReason::LeftAdmissibleSet => "left U_δ",
            HaltReason::PicardRejected => "Picard step rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub config: SimulationConfig,
    pub monitors: Vec<MonitorRow>,
    pub checkpoints: Vec<Checkpoint>,
    pub snapshots: Vec<Snapshot>,
    pub final_state: FlowState,
    pub halt: HaltReason,
    pub halt_detail: String,
}

impl TrajectoryRecord {
    pub fn admissible_time(&self) -> f64 {
        self.monitors
            .iter()
            .filter(|m| m.admissible)
            .map(|m| m.t)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub steps: usize,
    pub t_final: f64,
    /// `max_α |X_back(α, 0) - α|_∞`.
    pub max_error: f64,
}

/// A marker lattice moved by a kernel.
#[derive(Debug, Clone)]
pub struct FlowProblem {
    pub markers: MarkerLattice,
    pub kernel: KernelSpec,
    pub rule: SingularCellRule,
    pub delta: f64,
    /// Pair budget for the Hölder part of the `‖φ_X‖_{1,γ}` monitor.
    pub pair_budget: usize,
}

/// Where velocities are wanted.
enum Targets<'a> {
    Markers(&'a [f64]),
    Points(&'a [f64]),
}

impl FlowProblem {
    pub fn new(markers: MarkerLattice, kernel: KernelSpec) -> Result<Self> {
        if markers.dim() != kernel.dim() {
            return Err(Error::domain(format!(
                "kernel '{}' has dimension {} but the marker lattice has dimension {}",
                kernel.name(),
                kernel.dim(),
                markers.dim()
            )));
        }
        Ok(FlowProblem {
            markers,
            kernel,
            rule: SingularCellRule::Exclude,
            delta: DEFAULT_DELTA,
            pair_budget: DEFAULT_PAIR_BUDGET,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_rule(mut self, rule: SingularCellRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_pair_budget(mut self, budget: usize) -> Self {
        self.pair_budget = budget;
        self
    }

    fn n(&self) -> usize {
        self.markers.dim()
    }

    /// `X = α`, `DX = I`, `det DX = 1`.
    pub fn initial_state(&self) -> FlowState {
        let n = self.n();
        let m = self.markers.len();
        let mut dx = vec![0.0; m * n * n];
        for jac in dx.chunks_exact_mut(n * n) {
            for a in 0..n {
                jac[a * n + a] = 1.0;
            }
        }
        FlowState {
            t: 0.0,
            positions: self.markers.labels(),
            dx,
            det: vec![1.0; m],
            phi_norm: 0.0,
            delta: self.delta,
            min_det: 1.0,
            max_det: 1.0,
            admissible: self.delta > 0.0,
        }
    }

    fn finish_state(&self, t: f64, positions: Vec<f64>, previous: &FlowState) -> Result<FlowState> {
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedState(format!("non-finite marker position at t = {t}")));
        }
        if self.markers.sources().is_empty() && positions == previous.positions {
            // nothing moves: keep the exact deformation data
            return Ok(FlowState {
                t,
                positions,
                ..previous.clone()
            });
        }
        let (dx, det) = deformation_gradient(self.markers.lattice(), &positions);
        let phi = phi_norm(self.markers.lattice(), &positions, &dx, self.markers.gamma(), self.pair_budget)?;
        let min_det = det.iter().copied().fold(f64::INFINITY, f64::min);
        let max_det = det.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(FlowState {
            t,
            positions,
            dx,
            det,
            phi_norm: phi,
            delta: self.delta,
            min_det,
            max_det,
            admissible: min_det > DET_FLOOR && phi < self.delta,
        })
    }

    fn sources(&self, positions: &[f64], det: &[f64]) -> (Sources, Vec<usize>) {
        let n = self.n();
        let w = self.markers.lattice().cell_volume();
        let mut src = Sources::new(n);
        let mut slot = vec![usize::MAX; self.markers.len()];
        for &i in self.markers.sources() {
            slot[i] = src.len();
            src.push(&positions[i * n..(i + 1) * n], self.markers.rho0()[i] * det[i] * w);
        }
        (src, slot)
    }

    /// Exact integral of the kernel over a cell of volume `det·hⁿ` centred
    /// at the target (axis-aligned approximation of the deformed cell).
    fn self_cell(&self, det: f64, out: &mut [f64]) -> Result<()> {
        let n = self.n();
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.kernel.parity() == Parity::Odd {
            return Ok(());
        }
        let half = 0.5 * self.markers.spacing() * det.abs().powf(1.0 / n as f64);
        let lo = vec![-half; n];
        let hi = vec![half; n];
        homogeneous_box_integral(&lo, &hi, &|d, o| self.kernel.eval_into(d, o), out)
    }

    fn velocities(&self, positions: &[f64], det: &[f64], targets: Targets) -> Result<Vec<f64>> {
        let n = self.n();
        let (src, slot) = self.sources(positions, det);
        let (points, markers) = match targets {
            Targets::Markers(p) => (p, true),
            Targets::Points(p) => (p, false),
        };
        let mut out = vec![0.0; points.len()];
        if src.len() == 0 {
            return Ok(out);
        }
        let rho0 = self.markers.rho0();
        let w = self.markers.lattice().cell_volume();
        let polar = self.rule == SingularCellRule::PolarCorrect && markers;
        out.par_chunks_mut(n)
            .zip(points.par_chunks(n))
            .enumerate()
            .try_for_each(|(i, (o, q))| -> Result<()> {
                let skip = if markers && slot[i] != usize::MAX { Some(slot[i]) } else { None };
                src.kernel_sum(&self.kernel, q, skip, o);
                if polar && rho0[i] != 0.0 {
                    let mut cell = [0.0; 3];
                    self.self_cell(det[i], &mut cell[..n])?;
                    // the cell integral already carries the volume det·hⁿ
                    let _ = w;
                    for k in 0..n {
                        o[k] += rho0[i] * cell[k];
                    }
                }
                Ok(())
            })?;
        Ok(out)
    }

    /// `F(Y)` at every marker for arbitrary marker positions `Y`, with
    /// `det DY` recomputed from `Y`.
    fn rhs(&self, positions: &[f64]) -> Result<Vec<f64>> {
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedState("non-finite marker position during a stage".into()));
        }
        if self.markers.sources().is_empty() {
            return Ok(vec![0.0; positions.len()]);
        }
        let (_, det) = deformation_gradient(self.markers.lattice(), positions);
        self.velocities(positions, &det, Targets::Markers(positions))
    }

    fn require_admissible(&self, state: &FlowState) -> Result<()> {
        if state.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedState(format!("non-finite marker position at t = {}", state.t)));
        }
        if !state.admissible {
            return Err(Error::Inadmissible(format!(
                "t = {}: min det DX = {}, ‖φ‖ = {} (δ = {})",
                state.t, state.min_det, state.phi_norm, state.delta
            )));
        }
        Ok(())
    }

    /// Velocity `F(X)` at every marker (`targets = None`) or at arbitrary
    /// points. At arbitrary points every source is summed (coincident
    /// sources are skipped).
    pub fn velocity_from_state(&self, state: &FlowState, targets: Option<&[f64]>) -> Result<Vec<f64>> {
        self.require_admissible(state)?;
        match targets {
            None => self.velocities(&state.positions, &state.det, Targets::Markers(&state.positions)),
            Some(p) => {
                if p.len() % self.n() != 0 || p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::domain("target points must be finite and whole"));
                }
                self.velocities(&state.positions, &state.det, Targets::Points(p))
            }
        }
    }

    fn rk4_positions(&self, x: &[f64], k1: &[f64], dt: f64) -> Result<Vec<f64>> {
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(p, v)| p + a * v).collect() };
        let k2 = self.rhs(&axpy(0.5 * dt, k1))?;
        let k3 = self.rhs(&axpy(0.5 * dt, &k2))?;
        let k4 = self.rhs(&axpy(dt, &k3))?;
        Ok((0..x.len())
            .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// One classical RK4 step; `det DX` is recomputed at every stage.
    pub fn step_rk4(&self, state: &FlowState, dt: f64) -> Result<FlowState> {
        self.require_admissible(state)?;
        check_dt(dt)?;
        let k1 = self.velocities(&state.positions, &state.det, Targets::Markers(&state.positions))?;
        let x = self.rk4_positions(&state.positions, &k1, dt)?;
        self.finish_state(state.t + dt, x, state)
    }

    /// Trapezoidal step `X⁺ = X + dt/2 (F(X) + F(X⁺))` solved by fixed-point
    /// iteration from an explicit Euler predictor.
    pub fn step_picard(
        &self,
        state: &FlowState,
        dt: f64,
        tol: f64,
        max_iter: usize,
        damping: f64,
    ) -> Result<(FlowState, PicardStats)> {
        self.require_admissible(state)?;
        check_dt(dt)?;
        let f0 = self.velocities(&state.positions, &state.det, Targets::Markers(&state.positions))?;
        let (x, stats) = self.picard_positions(&state.positions, &f0, dt, tol, max_iter, damping)?;
        Ok((self.finish_state(state.t + dt, x, state)?, stats))
    }

    fn picard_positions(
        &self,
        x: &[f64],
        f0: &[f64],
        dt: f64,
        tol: f64,
        max_iter: usize,
        damping: f64,
    ) -> Result<(Vec<f64>, PicardStats)> {
        let mut y: Vec<f64> = x.iter().zip(f0).map(|(p, v)| p + dt * v).collect();
        let mut residuals = Vec::new();
        let mut growth = 0;
        for it in 1..=max_iter {
            let fy = match self.rhs(&y) {
                Ok(v) => v,
                Err(Error::PoisonedState(_)) => return Err(Error::PicardRejected { residuals }),
                Err(e) => return Err(e),
            };
            let mut res = 0.0f64;
            let next: Vec<f64> = (0..x.len())
                .map(|i| {
                    let g = x[i] + 0.5 * dt * (f0[i] + fy[i]);
                    let v = y[i] + damping * (g - y[i]);
                    res = res.max((v - y[i]).abs());
                    v
                })
                .collect();
            if !res.is_finite() {
                residuals.push(res);
                return Err(Error::PicardRejected { residuals });
            }
            if residuals.last().is_some_and(|r| res > *r) {
                growth += 1;
            } else {
                growth = 0;
            }
            residuals.push(res);
            y = next;
            if res <= tol {
                return Ok((
                    y,
                    PicardStats {
                        iterations: it,
                        residuals,
                    },
                ));
            }
            if growth >= 2 {
                break;
            }
        }
        Err(Error::PicardRejected { residuals })
    }

    fn speed(&self, v: &[f64]) -> f64 {
        v.chunks_exact(self.n())
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    fn monitor(&self, step: usize, s: &FlowState, max_speed: f64) -> MonitorRow {
        MonitorRow {
            step,
            t: s.t,
            min_det: s.min_det,
            max_det: s.max_det,
            phi_norm: s.phi_norm,
            max_speed,
            admissible: s.admissible,
        }
    }

    /// Advance to `T` or to the first inadmissible state.
    pub fn simulate(&self, cfg: &SimulationConfig) -> Result<TrajectoryRecord> {
        cfg.validate()?;
        let steps = cfg.steps();
        let mut state = self.initial_state();
        self.require_admissible(&state)?;
        let mut wanted: Vec<(f64, usize)> = cfg
            .checkpoint_times
            .iter()
            .map(|&t| (t, ((t / cfg.dt).round() as usize).min(steps)))
            .collect();
        wanted.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.total_cmp(&b.0)));
        let mut record = TrajectoryRecord {
            config: cfg.clone(),
            monitors: Vec::with_capacity(steps + 1),
            checkpoints: Vec::new(),
            snapshots: Vec::new(),
            final_state: state.clone(),
            halt: HaltReason::Completed,
            halt_detail: String::new(),
        };
        let snapshot = |rec: &mut TrajectoryRecord, step: usize, s: &FlowState| {
            if cfg.snapshot_every > 0 && (step % cfg.snapshot_every == 0 || step == steps) {
                rec.snapshots.push(Snapshot {
                    step,
                    t: s.t,
                    positions: s.positions.clone(),
                    det: s.det.clone(),
                });
            }
        };
        let checkpoint = |rec: &mut TrajectoryRecord, step: usize, s: &FlowState| {
            for (t, k) in &wanted {
                if *k == step {
                    rec.checkpoints.push(Checkpoint {
                        requested_t: *t,
                        step,
                        state: s.clone(),
                    });
                }
            }
        };
        snapshot(&mut record, 0, &state);
        checkpoint(&mut record, 0, &state);
        for step in 1..=steps {
            let t_next = cfg.time_of(step);
            let dt = t_next - state.t;
            let f0 = self.velocities(&state.positions, &state.det, Targets::Markers(&state.positions))?;
            record.monitors.push(self.monitor(step - 1, &state, self.speed(&f0)));
            let next = match cfg.integrator {
                Integrator::Rk4 => self.rk4_positions(&state.positions, &f0, dt),
                Integrator::Picard => self
                    .picard_positions(&state.positions, &f0, dt, cfg.picard_tol, cfg.picard_max_iter, cfg.picard_damping)
                    .map(|p| p.0),
            };
            let x = match next {
                Ok(x) => x,
                Err(Error::PicardRejected { residuals }) => {
                    record.halt = HaltReason::PicardRejected;
                    record.halt_detail = format!(
                        "step {step} (t = {}): no contraction, residuals {residuals:?}",
                        state.t
                    );
                    record.final_state = state;
                    return Ok(record);
                }
                Err(e) => return Err(e),
            };
            let mut new_state = self.finish_state(t_next, x, &state)?;
            if step == steps {
                new_state.t = cfg.t_final;
            }
            state = new_state;
            snapshot(&mut record, step, &state);
            checkpoint(&mut record, step, &state);
            if !state.admissible {
                record.monitors.push(self.monitor(step, &state, f64::NAN));
                record.halt = HaltReason::LeftAdmissibleSet;
                record.halt_detail = format!(
                    "left U_δ at t = {}: min det DX = {}, ‖φ‖ = {} (δ = {})",
                    state.t, state.min_det, state.phi_norm, state.delta
                );
                record.final_state = state;
                return Ok(record);
            }
        }
        let f = self.velocities(&state.positions, &state.det, Targets::Markers(&state.positions))?;
        record.monitors.push(self.monitor(steps, &state, self.speed(&f)));
        record.final_state = state;
        Ok(record)
    }

    /// `ρ(x, t)` from `ρ₀` carried by the markers: a modified Shepard blend
    /// over the `2ⁿ` nearest markers with Franke–Little inverse-distance
    /// weights. Marker `α` contributes `ρ₀(α + DX(α)⁻¹(x - X(α)))`, i.e. `ρ₀`
    /// pulled back through the local affine inverse of the flow and
    /// interpolated on the label lattice. The blend is clamped to the range
    /// of `ρ₀`, is exact at marker positions and is zero farther than `2h`
    /// from every marker.
    pub fn reconstruct_density(&self, state: &FlowState, points: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if points.len() % n != 0 || points.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("evaluation points must be finite and whole"));
        }
        if state.positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::PoisonedState("non-finite marker position".into()));
        }
        let h = self.markers.spacing();
        let grid = CellGrid::new(n, &state.positions, h);
        let k = 1usize << n;
        let lattice = self.markers.lattice();
        let rho0 = self.markers.rho0();
        let (lo, hi) = rho0.iter().fold((0.0f64, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        let nodal = |i: usize, q: &[f64]| -> f64 {
            let x = &state.positions[i * n..(i + 1) * n];
            let mut d = [0.0; 3];
            for c in 0..n {
                d[c] = q[c] - x[c];
            }
            let Some(step) = solve(&state.dx[i * n * n..(i + 1) * n * n], &d[..n], n) else {
                return rho0[i];
            };
            let mut alpha = [0.0; 3];
            lattice.coord(i, &mut alpha[..n]);
            for c in 0..n {
                alpha[c] += step[c];
            }
            label_interp(lattice, rho0, &alpha[..n])
        };
        Ok(points
            .par_chunks(n)
            .map(|q| {
                let near = grid.nearest(q, k + 1);
                if near.is_empty() || near[0].1 > 2.0 * h {
                    return 0.0;
                }
                if near[0].1 == 0.0 {
                    return rho0[near[0].0];
                }
                let radius = if near.len() > k { near[k].1 } else { near.last().unwrap().1 * 1.5 };
                let used = &near[..near.len().min(k)];
                let (mut num, mut den) = (0.0, 0.0);
                for &(i, d) in used {
                    let w = ((radius - d).max(0.0) / (radius * d)).powi(2);
                    num += w * nodal(i, q);
                    den += w;
                }
                if den == 0.0 {
                    // all candidates tie with the cut-off radius: plain inverse-distance weights
                    for &(i, d) in used {
                        let w = 1.0 / (d * d);
                        num += w * nodal(i, q);
                        den += w;
                    }
                }
                (num / den).clamp(lo, hi)
            })
            .collect())
    }

    pub fn reconstruct_on_lattice(&self, state: &FlowState, eval: &Lattice) -> Result<SampledField> {
        if eval.dim() != self.n() {
            return Err(Error::domain("evaluation lattice dimension mismatch"));
        }
        let values = self.reconstruct_density(state, &eval.points())?;
        SampledField::on_lattice(eval.clone(), values)
    }

    /// Replays the stored trajectory backward from the final state: the
    /// velocity at time `τ` is the kernel sum over source markers at their
    /// stored positions (cubic Lagrange interpolation in time between
    /// snapshots), integrated with RK4 on the same time grid.
    pub fn invert_flow_check(&self, record: &TrajectoryRecord) -> Result<RoundTripReport> {
        let snaps = &record.snapshots;
        let complete = snaps.len() >= 2
            && snaps.iter().enumerate().all(|(k, s)| s.step == k)
            && record.halt == HaltReason::Completed
            && snaps.last().map(|s| s.step) == record.monitors.last().map(|m| m.step);
        if !complete {
            return Err(Error::domain(
                "round-trip check needs a completed run with a snapshot at every step",
            ));
        }
        let n = self.n();
        let steps = snaps.len() - 1;
        let mut y = snaps[steps].positions.clone();
        let src_at = |tau: f64| -> (Vec<f64>, Vec<f64>) {
            // four consecutive snapshots bracketing tau
            let k = snaps.partition_point(|s| s.t < tau).clamp(1, steps);
            let lo = k.saturating_sub(2).min(steps.saturating_sub(3));
            let idx: Vec<usize> = (lo..(lo + 4).min(steps + 1)).collect();
            let ts: Vec<f64> = idx.iter().map(|&i| snaps[i].t).collect();
            let weights: Vec<f64> = (0..idx.len())
                .map(|a| {
                    (0..idx.len())
                        .filter(|&b| b != a)
                        .map(|b| (tau - ts[b]) / (ts[a] - ts[b]))
                        .product()
                })
                .collect();
            let mut pos = vec![0.0; snaps[0].positions.len()];
            let mut det = vec![0.0; snaps[0].det.len()];
            for (w, &i) in weights.iter().zip(&idx) {
                for (p, v) in pos.iter_mut().zip(&snaps[i].positions) {
                    *p += w * v;
                }
                for (d, v) in det.iter_mut().zip(&snaps[i].det) {
                    *d += w * v;
                }
            }
            (pos, det)
        };
        let field = |tau: f64, at: &[f64]| -> Result<Vec<f64>> {
            let (pos, det) = src_at(tau);
            self.velocities_at_markers_from(&pos, &det, at)
        };
        for k in (1..=steps).rev() {
            let (t1, t0) = (snaps[k].t, snaps[k - 1].t);
            let dt = t1 - t0;
            let mid = 0.5 * (t0 + t1);
            let axpy = |a: f64, v: &[f64]| -> Vec<f64> { y.iter().zip(v).map(|(p, q)| p - a * q).collect() };
            let k1 = field(t1, &y)?;
            let k2 = field(mid, &axpy(0.5 * dt, &k1))?;
            let k3 = field(mid, &axpy(0.5 * dt, &k2))?;
            let k4 = field(t0, &axpy(dt, &k3))?;
            for i in 0..y.len() {
                y[i] -= dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        let labels = self.markers.labels();
        let max_error = y.iter().zip(&labels).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let _ = n;
        Ok(RoundTripReport {
            steps,
            t_final: snaps[steps].t,
            max_error,
        })
    }

    /// Marker velocities where sources sit at `source_positions` but the
    /// targets (one per marker) are at `at`; each marker skips itself.
    fn velocities_at_markers_from(&self, source_positions: &[f64], det: &[f64], at: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let (src, slot) = self.sources(source_positions, det);
        let mut out = vec![0.0; at.len()];
        if src.len() == 0 {
            return Ok(out);
        }
        out.par_chunks_mut(n).zip(at.par_chunks(n)).enumerate().for_each(|(i, (o, q))| {
            let skip = (slot[i] != usize::MAX).then_some(slot[i]);
            src.kernel_sum(&self.kernel, q, skip, o);
        });
        Ok(out)
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("time step must be positive, got {dt}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Builtin;

    fn gaussian(sigma: f64) -> Profile {
        Profile::Gaussian {
            amplitude: 1.0,
            sigma,
            radius: 2.5 * sigma,
            center: vec![],
        }
    }

    fn problem(kernel: Builtin, h: f64, profile: &Profile) -> FlowProblem {
        let m = MarkerLattice::from_profile(kernel.dim(), h, profile, 0.5).unwrap();
        FlowProblem::new(m, KernelSpec::builtin(kernel)).unwrap()
    }

    #[test]
    fn margin_is_enforced() {
        let lat = Lattice::centered(2, 0.1, 4).unwrap();
        let mut rho = vec![0.0; lat.len()];
        rho[lat.flat(&[1, 4])] = 1.0;
        assert!(MarkerLattice::new(lat.clone(), rho, 0.5).is_err());
        let mut ok = vec![0.0; lat.len()];
        ok[lat.flat(&[4, 4])] = 1.0;
        assert!(MarkerLattice::new(lat, ok, 0.5).is_ok());
    }

    #[test]
    fn margin_layers_of_from_profile_are_zero() {
        let m = MarkerLattice::from_profile(2, 1.0 / 16.0, &gaussian(0.2), 0.5).unwrap();
        let lat = m.lattice();
        for i in 0..lat.len() {
            if lat.is_margin(i, MARGIN_LAYERS) {
                assert_eq!(m.rho0()[i], 0.0);
            }
        }
        assert!(!m.sources().is_empty());
    }

    #[test]
    fn affine_maps_have_exact_gradients() {
        let lat = Lattice::centered(2, 0.125, 4).unwrap();
        let a = [[1.5, -0.25], [0.5, 2.0]];
        let pos: Vec<f64> = lat
            .points()
            .chunks_exact(2)
            .flat_map(|p| [a[0][0] * p[0] + a[0][1] * p[1] + 0.3, a[1][0] * p[0] + a[1][1] * p[1]])
            .collect();
        let (dx, det) = deformation_gradient(&lat, &pos);
        for (j, d) in dx.chunks_exact(4).zip(&det) {
            for (a, b) in j.iter().zip([1.5, -0.25, 0.5, 2.0]) {
                assert!((a - b).abs() < 1e-13);
            }
            assert!((d - 3.125).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_determinant() {
        let lat = Lattice::centered(3, 0.1, 3).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let pos: Vec<f64> = lat
            .points()
            .chunks_exact(3)
            .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
            .collect();
        let (_, det) = deformation_gradient(&lat, &pos);
        assert!(det.iter().all(|d| (d - 1.0).abs() < 1e-14));
    }

    #[test]
    fn initial_state_is_identity() {
        let p = problem(Builtin::BiotSavart2d, 1.0 / 16.0, &gaussian(0.2));
        let s = p.initial_state();
        assert_eq!(s.positions, p.markers.labels());
        assert!(s.det.iter().all(|d| *d == 1.0));
        assert!(s.admissible);
    }

    #[test]
    fn zero_density_does_not_move() {
        let lat = Lattice::centered(2, 0.1, 6).unwrap();
        let m = MarkerLattice::new(lat.clone(), vec![0.0; lat.len()], 0.5).unwrap();
        let p = FlowProblem::new(m, KernelSpec::builtin(Builtin::BiotSavart2d)).unwrap();
        let s0 = p.initial_state();
        assert!(p.velocity_from_state(&s0, None).unwrap().iter().all(|v| *v == 0.0));
        let s1 = p.step_rk4(&s0, 0.01).unwrap();
        assert_eq!(s1.positions, s0.positions);
        assert_eq!(s1.det, s0.det);
        assert_eq!(s1.t, 0.01);
        let (s2, stats) = p.step_picard(&s0, 0.01, 1e-12, 10, 1.0).unwrap();
        assert_eq!(stats.iterations, 1);
        assert_eq!(s2.positions, s0.positions);
        let rec = p.simulate(&SimulationConfig::new(0.25, 1.0)).unwrap();
        assert_eq!(rec.halt, HaltReason::Completed);
        assert!(rec.final_state.det.iter().all(|d| *d == 1.0));
    }

    #[test]
    fn radial_biot_savart_velocity_is_tangential() {
        let p = problem(Builtin::BiotSavart2d, 1.0 / 32.0, &gaussian(0.2));
        let s = p.initial_state();
        let v = p.velocity_from_state(&s, None).unwrap();
        let vmax = p.speed(&v);
        for (x, u) in s.positions.chunks_exact(2).zip(v.chunks_exact(2)) {
            let r = x[0].hypot(x[1]);
            if r > 0.0 {
                let radial = (x[0] * u[0] + x[1] * u[1]).abs() / r;
                // the lattice is only 4-fold symmetric, so the radial part is a
                // (tiny) discretization error rather than exactly zero
                assert!(radial <= 1e-4 * vmax, "{radial} at {x:?}, vmax {vmax}");
            }
        }
    }

    #[test]
    fn newtonian_velocity_inside_disk_is_x_over_two() {
        let disk = Profile::MollifiedDisk {
            amplitude: 1.0,
            radius: 0.5,
            width: 0.05,
            center: vec![],
        };
        let p = problem(Builtin::GradNewtonian2d, 1.0 / 64.0, &disk);
        let s = p.initial_state();
        let q = [0.1, -0.05, 0.2, 0.1];
        let v = p.velocity_from_state(&s, Some(&q)).unwrap();
        for k in 0..2 {
            let (ex, ey) = (q[2 * k] / 2.0, q[2 * k + 1] / 2.0);
            // relative to the peak core speed R/2
            let err = (v[2 * k] - ex).hypot(v[2 * k + 1] - ey) / 0.25;
            assert!(err < 0.02, "{err}");
        }
    }

    #[test]
    fn density_reconstruction_is_exact_at_markers_and_bounded() {
        let p = problem(Builtin::BiotSavart2d, 1.0 / 16.0, &gaussian(0.25));
        let s = p.step_rk4(&p.initial_state(), 0.05).unwrap();
        let at = p.reconstruct_density(&s, &s.positions).unwrap();
        assert_eq!(at, p.markers.rho0());
        let probe: Vec<f64> = (0..200).flat_map(|k| [(k as f64 * 0.37).sin() * 0.7, (k as f64 * 0.53).cos() * 0.7]).collect();
        let vals = p.reconstruct_density(&s, &probe).unwrap();
        let (lo, hi) = p.markers.rho0().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(vals.iter().all(|v| *v >= lo && *v <= hi));
        let far = p.reconstruct_density(&s, &[5.0, 5.0]).unwrap();
        assert_eq!(far, vec![0.0]);
    }

    #[test]
    fn oversized_picard_step_is_rejected() {
        let strong = Profile::Gaussian {
            amplitude: 50.0,
            sigma: 0.1,
            radius: 0.25,
            center: vec![],
        };
        let p = problem(Builtin::BiotSavart2d, 1.0 / 16.0, &strong).with_delta(1e9);
        let err = p.step_picard(&p.initial_state(), 10.0, 1e-12, 30, 1.0).unwrap_err();
        assert!(matches!(err, Error::PicardRejected { .. }), "{err}");
    }

    #[test]
    fn simulate_halts_when_leaving_admissible_set() {
        let p = problem(Builtin::GradNewtonian2d, 1.0 / 16.0, &gaussian(0.2)).with_delta(0.05);
        let rec = p.simulate(&SimulationConfig::new(0.05, 1.0)).unwrap();
        assert_eq!(rec.halt, HaltReason::LeftAdmissibleSet);
        assert!(!rec.final_state.admissible);
        assert!(rec.monitors.iter().filter(|m| m.admissible).all(|m| m.min_det > DET_FLOOR && m.phi_norm < 0.05));
    }

    #[test]
    fn checkpoints_use_nearest_step() {
        let p = problem(Builtin::BiotSavart2d, 1.0 / 8.0, &gaussian(0.2)).with_delta(10.0);
        let mut cfg = SimulationConfig::new(0.1, 0.5);
        cfg.checkpoint_times = vec![0.23, 0.5];
        let rec = p.simulate(&cfg).unwrap();
        assert_eq!(rec.checkpoints.len(), 2);
        assert_eq!(rec.checkpoints[0].step, 2);
        assert!((rec.checkpoints[0].state.t - 0.2).abs() < 1e-12);
        assert_eq!(rec.checkpoints[1].state.t, 0.5);
        let times: Vec<f64> = rec.monitors.iter().map(|m| m.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn round_trip_needs_snapshots() {
        let p = problem(Builtin::BiotSavart2d, 1.0 / 8.0, &gaussian(0.2)).with_delta(10.0);
        let rec = p.simulate(&SimulationConfig::new(0.1, 0.3)).unwrap();
        assert!(p.invert_flow_check(&rec).is_err());
        let mut cfg = SimulationConfig::new(0.1, 0.3);
        cfg.snapshot_every = 1;
        let rec = p.simulate(&cfg).unwrap();
        let r = p.invert_flow_check(&rec).unwrap();
        assert!(r.max_error < 1e-4, "{r:?}");
    }
}
