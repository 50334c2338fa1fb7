//! Lattice quadrature for the weakly singular convolution `T f = k ∗ f` and
//! the principal-value operator `S f = p.v. ∂_i k_j ∗ f`, plus empirical
//! constants for the associated Hölder bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function_spaces::{holder_seminorm, SampledField, DEFAULT_PAIR_BUDGET};
use crate::kernels::{check_spherical_mean_zero, dirac_correction, KernelSpec};
use crate::lattice::Lattice;
use crate::nbody::Sources;
use crate::quadrature::homogeneous_box_integral;

/// Treatment of the lattice cell that contains the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularCellRule {
    /// Drop the cell (O(h) since the kernel is locally integrable).
    #[default]
    Exclude,
    /// Replace the cell's midpoint term by the exact polar-coordinate
    /// integral of the kernel over the cell, times the cell value.
    PolarCorrect,
}

impl std::str::FromStr for SingularCellRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(SingularCellRule::Exclude),
            "polar-correct" => Ok(SingularCellRule::PolarCorrect),
            other => Err(Error::domain(format!(
                "unknown singular cell rule '{other}' (expected exclude or polar-correct)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PVConfig {
    pub epsilon: f64,
    pub spacing: f64,
    pub singular_cell_rule: SingularCellRule,
}

impl PVConfig {
    /// Default excision `ε = 2h`.
    pub fn new(spacing: f64) -> Self {
        PVConfig {
            epsilon: 2.0 * spacing,
            spacing,
            singular_cell_rule: SingularCellRule::Exclude,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::domain("lattice spacing must be positive"));
        }
        if !(self.epsilon >= self.spacing * (1.0 - 1e-12)) || !self.epsilon.is_finite() {
            return Err(Error::domain(format!(
                "excision radius {} must not be finer than the lattice spacing {}",
                self.epsilon, self.spacing
            )));
        }
        Ok(())
    }
}

/// Nonzero lattice samples as weighted sources, with a node → source map.
struct LatticeSources<'a> {
    lattice: &'a Lattice,
    sources: Sources,
    /// Source position for each lattice node (`usize::MAX` when the value is zero).
    slot: Vec<usize>,
    values: &'a [f64],
}

fn lattice_of<'a>(f: &'a SampledField, kernel: &KernelSpec) -> Result<&'a Lattice> {
    let lat = f
        .lattice()
        .ok_or_else(|| Error::UnsupportedStructure("singular integrals need lattice samples".into()))?;
    if f.components() != 1 {
        return Err(Error::domain("singular integrals act on scalar fields"));
    }
    if lat.dim() != kernel.dim() {
        return Err(Error::domain(format!(
            "field has dimension {} but kernel '{}' has dimension {}",
            lat.dim(),
            kernel.name(),
            kernel.dim()
        )));
    }
    Ok(lat)
}

impl<'a> LatticeSources<'a> {
    fn new(f: &'a SampledField, lattice: &'a Lattice) -> Self {
        let n = lattice.dim();
        let w = lattice.cell_volume();
        let mut sources = Sources::new(n);
        let mut slot = vec![usize::MAX; lattice.len()];
        let mut p = [0.0; 3];
        for (node, v) in f.values().iter().enumerate() {
            if *v != 0.0 {
                lattice.coord(node, &mut p[..n]);
                slot[node] = sources.len();
                sources.push(&p[..n], v * w);
            }
        }
        LatticeSources {
            lattice,
            sources,
            slot,
            values: f.values(),
        }
    }

    /// Node whose cell contains `x`, if that node carries a source.
    fn containing(&self, x: &[f64]) -> Option<usize> {
        self.lattice.nearest_node(x)
    }
}

fn check_targets(targets: &[f64], n: usize) -> Result<()> {
    if targets.len() % n != 0 {
        return Err(Error::domain("target array is not a whole number of points"));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite target point"));
    }
    Ok(())
}

/// `∫_cell k(x - y) dy` for the cell centred at `c` (which contains `x`).
fn cell_integral(kernel: &KernelSpec, x: &[f64], c: &[f64], h: f64, out: &mut [f64]) -> Result<()> {
    let n = x.len();
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    for k in 0..n {
        // z = x - y ranges over [x - c - h/2, x - c + h/2]
        lo[k] = (x[k] - c[k] - 0.5 * h).min(0.0);
        hi[k] = (x[k] - c[k] + 0.5 * h).max(0.0);
    }
    homogeneous_box_integral(&lo[..n], &hi[..n], &|d, o| kernel.eval_into(d, o), out)
}

/// Midpoint lattice sum `Σ k(x - y) f(y) hⁿ` at each target. Returns `n`
/// components per target, point-major.
pub fn convolve_t(kernel: &KernelSpec, f: &SampledField, targets: &[f64], rule: SingularCellRule) -> Result<Vec<f64>> {
    let lattice = lattice_of(f, kernel)?;
    let n = lattice.dim();
    check_targets(targets, n)?;
    let src = LatticeSources::new(f, lattice);
    let h = lattice.spacing();
    let mut out = vec![0.0; targets.len()];
    if src.sources.len() == 0 {
        return Ok(out);
    }
    out.par_chunks_mut(n)
        .zip(targets.par_chunks(n))
        .try_for_each(|(o, x)| -> Result<()> {
            let own = src.containing(x);
            let skip = own.map(|node| src.slot[node]).filter(|s| *s != usize::MAX);
            src.sources.kernel_sum(kernel, x, skip, o);
            if let (SingularCellRule::PolarCorrect, Some(node)) = (rule, own) {
                let v = src.values[node];
                if v != 0.0 {
                    let mut c = [0.0; 3];
                    lattice.coord(node, &mut c[..n]);
                    let mut cell = [0.0; 3];
                    cell_integral(kernel, x, &c[..n], h, &mut cell[..n])?;
                    for k in 0..n {
                        o[k] += v * cell[k];
                    }
                }
            }
            Ok(())
        })?;
    Ok(out)
}

/// Principal-value values at excision `ε` together with the `2ε` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvValues {
    pub epsilon: f64,
    pub values: Vec<f64>,
    pub values_2eps: Vec<f64>,
    /// `max |S_ε f - S_{2ε} f|` over the targets.
    pub sensitivity: f64,
}

/// Quadrature order used to certify the zero-spherical-mean prerequisite.
const MEAN_CHECK_ORDER: usize = 64;

/// Excised lattice sum `Σ_{|x-y|>ε} ∂_i k_j(x - y) f(y) hⁿ` (0-based `i`, `j`).
pub fn convolve_s_pv(
    kernel: &KernelSpec,
    i: usize,
    j: usize,
    f: &SampledField,
    targets: &[f64],
    cfg: &PVConfig,
) -> Result<PvValues> {
    let lattice = lattice_of(f, kernel)?;
    let n = lattice.dim();
    cfg.validate()?;
    if (cfg.spacing - lattice.spacing()).abs() > 1e-12 * lattice.spacing() {
        return Err(Error::domain(format!(
            "configured spacing {} differs from the field lattice spacing {}",
            cfg.spacing,
            lattice.spacing()
        )));
    }
    check_targets(targets, n)?;
    let mean = check_spherical_mean_zero(kernel, i, j, MEAN_CHECK_ORDER)?;
    if !mean.passed {
        return Err(Error::PvUndefined { i, j, mean: mean.mean });
    }
    let src = LatticeSources::new(f, lattice);
    let pairs: Vec<(f64, f64)> = targets
        .par_chunks(n)
        .map(|x| src.sources.pv_sum(kernel, i, j, x, cfg.epsilon))
        .collect();
    let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let values_2eps: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let sensitivity = pairs.iter().fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(PvValues {
        epsilon: cfg.epsilon,
        values,
        values_2eps,
        sensitivity,
    })
}

/// Discrete form of `∂_i T_j f = c_ij f + S_ij f` at lattice targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub epsilon: f64,
    pub c_ij: f64,
    pub stencil: DifferenceStencil,
    pub max_error: f64,
    pub scale: f64,
}

/// Difference quotient used for `∂_i T_j f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifferenceStencil {
    /// `(T(x + h e_i) - T(x)) / h`: first order.
    #[default]
    Forward,
    /// `(T(x + h e_i) - T(x - h e_i)) / 2h`. On lattice nodes with odd
    /// kernels the odd-order error terms cancel and the discrepancy
    /// converges at second order.
    Centred,
}

/// Compares a difference quotient (step `h`) of `T_j f` in direction `i`
/// with `c_ij f + S_ij f` at the given lattice nodes.
pub fn dirac_consistency(
    kernel: &KernelSpec,
    i: usize,
    j: usize,
    f: &SampledField,
    target_nodes: &[usize],
    cfg: &PVConfig,
    stencil: DifferenceStencil,
) -> Result<ConsistencyReport> {
    let lattice = lattice_of(f, kernel)?;
    let n = lattice.dim();
    let h = lattice.spacing();
    let mut plus = Vec::with_capacity(target_nodes.len() * n);
    let mut minus = Vec::with_capacity(target_nodes.len() * n);
    let mut centre = Vec::with_capacity(target_nodes.len() * n);
    let mut p = [0.0; 3];
    for &node in target_nodes {
        if node >= lattice.len() {
            return Err(Error::domain(format!("target node {node} outside the lattice")));
        }
        lattice.coord(node, &mut p[..n]);
        centre.extend_from_slice(&p[..n]);
        let mut q = p;
        q[i] += h;
        plus.extend_from_slice(&q[..n]);
        if stencil == DifferenceStencil::Centred {
            q[i] -= 2.0 * h;
        } else {
            q[i] -= h;
        }
        minus.extend_from_slice(&q[..n]);
    }
    let tp = convolve_t(kernel, f, &plus, cfg.singular_cell_rule)?;
    let tm = convolve_t(kernel, f, &minus, cfg.singular_cell_rule)?;
    let s = convolve_s_pv(kernel, i, j, f, &centre, cfg)?;
    let c = dirac_correction(kernel, 256)?.get(i, j);
    let mut max_error = 0.0f64;
    let mut scale = 0.0f64;
    for (t, &node) in target_nodes.iter().enumerate() {
        let width = if stencil == DifferenceStencil::Centred { 2.0 * h } else { h };
        let fd = (tp[t * n + j] - tm[t * n + j]) / width;
        let rhs = c * f.values()[node] + s.values[t];
        max_error = max_error.max((fd - rhs).abs());
        scale = scale.max(rhs.abs());
    }
    Ok(ConsistencyReport {
        i,
        j,
        h,
        epsilon: cfg.epsilon,
        c_ij: c,
        stencil,
        max_error,
        scale,
    })
}

/// One row of the empirical constant report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SioRow {
    pub field_id: String,
    pub epsilon: f64,
    pub h: f64,
    pub support_radius: f64,
    pub sup_f: f64,
    pub holder_f: f64,
    pub sup_s: f64,
    pub seminorm_s: f64,
    /// `‖Sf‖_∞ / inf_ε (|f|_γ ε^γ + max(1, ln(R/ε))‖f‖_∞)`; `None` for `f ≡ 0`.
    pub implied_c_eps: Option<f64>,
    /// `|Sf|_γ / |f|_γ`; `None` for `f ≡ 0`.
    pub implied_c_sna: Option<f64>,
    /// `max|S_ε f - S_{2ε} f| / (ε^γ |f|_γ)`.
    pub eps_stability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SioReport {
    pub kernel: String,
    pub i: usize,
    pub j: usize,
    pub gamma: f64,
    pub rows: Vec<SioRow>,
    pub max_c_eps: f64,
    pub max_c_sna: f64,
    /// max/min ratio of each constant across the family.
    pub spread_c_eps: f64,
    pub spread_c_sna: f64,
}

/// Smallest bracket `|f|_γ ε^γ + max(1, ln(R/ε))‖f‖_∞` over a geometric
/// grid of excision radii `R·2^{-k/4}`.
fn best_bracket(holder: f64, sup: f64, radius: f64, gamma: f64) -> f64 {
    (-8..=160)
        .map(|k| {
            let eps = radius * 2f64.powf(-(k as f64) / 4.0);
            holder * eps.powf(gamma) + (radius / eps).ln().max(1.0) * sup
        })
        .fold(f64::INFINITY, f64::min)
}

/// Empirical constants for the sup-norm and Hölder bounds on `S` over a
/// family of lattice fields. `S f` is evaluated at every node of each
/// field's lattice.
pub fn estimate_sio_constants(
    kernel: &KernelSpec,
    i: usize,
    j: usize,
    family: &[(String, SampledField)],
    gamma: f64,
    cfg: &PVConfig,
) -> Result<SioReport> {
    if family.is_empty() {
        return Err(Error::domain("field family is empty"));
    }
    let mut rows = Vec::with_capacity(family.len());
    for (id, f) in family {
        let lattice = lattice_of(f, kernel)?;
        let s = convolve_s_pv(kernel, i, j, f, &lattice.points(), cfg)?;
        let sf = f.with_values(s.values.clone(), 1)?;
        let sup_f = f.sup_norm();
        let holder_f = holder_seminorm(f, gamma, DEFAULT_PAIR_BUDGET)?;
        let sup_s = sf.sup_norm();
        let seminorm_s = holder_seminorm(&sf, gamma, DEFAULT_PAIR_BUDGET)?;
        let radius = f.support_radius();
        let zero = sup_f == 0.0;
        rows.push(SioRow {
            field_id: id.clone(),
            epsilon: cfg.epsilon,
            h: lattice.spacing(),
            support_radius: radius,
            sup_f,
            holder_f,
            sup_s,
            seminorm_s,
            implied_c_eps: (!zero).then(|| sup_s / best_bracket(holder_f, sup_f, radius, gamma)),
            implied_c_sna: (!zero && holder_f > 0.0).then(|| seminorm_s / holder_f),
            eps_stability: (!zero && holder_f > 0.0).then(|| s.sensitivity / (cfg.epsilon.powf(gamma) * holder_f)),
        });
    }
    let stats = |get: &dyn Fn(&SioRow) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(get).collect();
        let max = v.iter().fold(0.0f64, |m, x| m.max(*x));
        let min = v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
        let spread = if v.is_empty() || min == 0.0 { if max == 0.0 { 1.0 } else { f64::INFINITY } } else { max / min };
        (max, spread)
    };
    let (max_c_eps, spread_c_eps) = stats(&|r| r.implied_c_eps);
    let (max_c_sna, spread_c_sna) = stats(&|r| r.implied_c_sna);
    Ok(SioReport {
        kernel: kernel.name().to_string(),
        i,
        j,
        gamma,
        rows,
        max_c_eps,
        max_c_sna,
        spread_c_eps,
        spread_c_sna,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Profile;
    use crate::kernels::Builtin;
    use std::f64::consts::PI;

    fn disk(h: f64) -> SampledField {
        let lat = Lattice::covering(2, h, 1.0 + 2.0 * h).unwrap();
        SampledField::sample(lat, |x| if x[0] * x[0] + x[1] * x[1] <= 1.0 { 1.0 } else { 0.0 }).unwrap()
    }

    fn gaussian(h: f64, sigma: f64) -> SampledField {
        let p = Profile::Gaussian {
            amplitude: 1.0,
            sigma,
            radius: 2.5 * sigma,
            center: vec![],
        };
        let lat = Lattice::covering(2, h, 2.5 * sigma + 3.0 * h).unwrap();
        SampledField::sample(lat, |x| p.eval(x)).unwrap()
    }

    #[test]
    fn newtonian_gradient_of_disk_is_x_over_two_inside() {
        let k = KernelSpec::builtin(Builtin::GradNewtonian2d);
        let f = disk(1.0 / 32.0);
        let v = convolve_t(&k, &f, &[0.5, 0.0, 0.0, 0.0], SingularCellRule::Exclude).unwrap();
        assert!((v[0] - 0.25).abs() < 0.02 * 0.25, "{v:?}");
        assert!(v[1].abs() < 1e-12);
        assert!(v[2].abs() < 1e-12 && v[3].abs() < 1e-12);
    }

    #[test]
    fn zero_field_gives_zero() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let lat = Lattice::centered(2, 0.1, 5).unwrap();
        let f = SampledField::on_lattice(lat, vec![0.0; 121]).unwrap();
        let t = convolve_t(&k, &f, &[0.1, 0.2], SingularCellRule::PolarCorrect).unwrap();
        assert_eq!(t, vec![0.0, 0.0]);
        let s = convolve_s_pv(&k, 0, 1, &f, &[0.1, 0.2], &PVConfig::new(0.1)).unwrap();
        assert_eq!(s.values, vec![0.0]);
    }

    #[test]
    fn convolution_is_linear() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let f = gaussian(1.0 / 16.0, 0.3);
        let lat = f.lattice().unwrap().clone();
        let g = SampledField::sample(lat.clone(), |x| (3.0 * x[0]).sin() * (x[1] * x[1] < 0.5) as u8 as f64).unwrap();
        let sum = SampledField::on_lattice(lat, f.values().iter().zip(g.values()).map(|(a, b)| a + b).collect()).unwrap();
        let t = [0.13, -0.4, 0.5, 0.5];
        let a = convolve_t(&k, &f, &t, SingularCellRule::Exclude).unwrap();
        let b = convolve_t(&k, &g, &t, SingularCellRule::Exclude).unwrap();
        let c = convolve_t(&k, &sum, &t, SingularCellRule::Exclude).unwrap();
        for q in 0..4 {
            assert!((a[q] + b[q] - c[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_correction_matches_refined_exclusion_off_node() {
        // A target off the nodes: the cell correction should move the exclude
        // result toward the fine-lattice value.
        let k = KernelSpec::builtin(Builtin::GradNewtonian2d);
        let x = [0.3 + 0.013, 0.2 - 0.021];
        let coarse = disk(1.0 / 32.0);
        let fine = disk(1.0 / 256.0);
        let ex = convolve_t(&k, &coarse, &x, SingularCellRule::Exclude).unwrap();
        let pc = convolve_t(&k, &coarse, &x, SingularCellRule::PolarCorrect).unwrap();
        let exact = [x[0] / 2.0, x[1] / 2.0];
        let _ = fine;
        let err = |v: &[f64]| ((v[0] - exact[0]).powi(2) + (v[1] - exact[1]).powi(2)).sqrt();
        assert!(err(&pc) < err(&ex), "{} vs {}", err(&pc), err(&ex));
    }

    #[test]
    fn pv_of_constant_on_ball_vanishes_at_center() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let h = 1.0 / 32.0;
        let f = disk(h);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let s = convolve_s_pv(&k, i, j, &f, &[0.0, 0.0], &PVConfig::new(h)).unwrap();
            assert!(s.values[0].abs() < 1e-12, "({i},{j}): {}", s.values[0]);
        }
    }

    #[test]
    fn pv_refuses_config_finer_than_grid() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let f = disk(0.1);
        let cfg = PVConfig::new(0.1).with_epsilon(0.05);
        assert!(convolve_s_pv(&k, 0, 1, &f, &[0.0, 0.0], &cfg).is_err());
    }

    #[test]
    fn pv_refuses_nonzero_spherical_mean() {
        // A true derivative of a degree -(n-1) kernel always has zero mean;
        // an inconsistent user derivative (1/|x|², positive everywhere) does not.
        let bad = KernelSpec::register(
            "inconsistent-derivative",
            2,
            crate::kernels::Parity::None,
            |x, o| {
                let r2 = x[0] * x[0] + x[1] * x[1];
                o[0] = x[0] / r2;
                o[1] = x[1] / r2;
            },
            |_, _, x| 1.0 / (x[0] * x[0] + x[1] * x[1]),
        )
        .unwrap();
        let f = disk(0.1);
        let err = convolve_s_pv(&bad, 0, 0, &f, &[0.0, 0.0], &PVConfig::new(0.1)).unwrap_err();
        assert!(matches!(err, Error::PvUndefined { .. }), "{err}");
    }

    #[test]
    fn scaling_the_field_doubles_s_and_keeps_constants() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let h = 1.0 / 16.0;
        let f = gaussian(h, 0.4);
        let g = f.with_values(f.values().iter().map(|v| 2.0 * v).collect(), 1).unwrap();
        let cfg = PVConfig::new(h);
        let t = [0.1, 0.3];
        let a = convolve_s_pv(&k, 0, 1, &f, &t, &cfg).unwrap();
        let b = convolve_s_pv(&k, 0, 1, &g, &t, &cfg).unwrap();
        assert_eq!(b.values[0], 2.0 * a.values[0]);
        let r = estimate_sio_constants(&k, 0, 1, &[("f".into(), f), ("2f".into(), g)], 0.5, &cfg).unwrap();
        let (c0, c1) = (r.rows[0].implied_c_sna.unwrap(), r.rows[1].implied_c_sna.unwrap());
        assert!((c0 - c1).abs() <= 1e-12 * c0);
    }

    #[test]
    fn zero_field_constants_are_skipped() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let lat = Lattice::centered(2, 0.1, 4).unwrap();
        let f = SampledField::on_lattice(lat, vec![0.0; 81]).unwrap();
        let r = estimate_sio_constants(&k, 0, 1, &[("zero".into(), f)], 0.5, &PVConfig::new(0.1)).unwrap();
        assert_eq!(r.rows[0].implied_c_eps, None);
        assert_eq!(r.rows[0].implied_c_sna, None);
    }

    #[test]
    fn dirac_consistency_error_is_small_on_a_smooth_bump() {
        let k = KernelSpec::builtin(Builtin::BiotSavart2d);
        let h = 1.0 / 32.0;
        let f = gaussian(h, 0.3);
        let lat = f.lattice().unwrap();
        let nodes: Vec<usize> = [[0.0, 0.0], [0.125, 0.0625], [-0.25, 0.1875]]
            .iter()
            .map(|p| lat.nearest_node(p).unwrap())
            .collect();
        for stencil in [DifferenceStencil::Forward, DifferenceStencil::Centred] {
            let rep = dirac_consistency(&k, 0, 1, &f, &nodes, &PVConfig::new(h), stencil).unwrap();
            assert!((rep.c_ij - 0.5).abs() < 1e-12);
            assert!(rep.max_error < 0.1 * rep.scale.max(1.0 / (2.0 * PI)), "{rep:?}");
        }
    }
}
