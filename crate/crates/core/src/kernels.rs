//! Homogeneous velocity kernels of degree `-(n-1)`.
//!
//! The fundamental solution of the Laplacian is normalised so that
//! `ΔN = δ₀`: `N(x) = log|x| / 2π` in the plane and `N(x) = -1 / (4π|x|)` in
//! space. All built-in kernels are derived from `∇N`:
//!
//! | name                 | n | k(x)                              |
//! |----------------------|---|-----------------------------------|
//! | `biot-savart-2d`     | 2 | `∇⊥N = (-x₂, x₁) / (2π|x|²)`      |
//! | `grad-newtonian-2d`  | 2 | `∇N = x / (2π|x|²)`               |
//! | `grad-newtonian-3d`  | 3 | `∇N = x / (4π|x|³)`               |
//! | `qg-3d`              | 3 | `L(∇N)`, `L(x) = (-x₂, x₁, 0)`     |
//!
//! Every kernel carries a sign (`+1` or `-1`) that multiplies `k`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::SphereRule;

/// Symmetry of `k` under `x ↦ -x`. Metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Builtin {
    BiotSavart2d,
    GradNewtonian2d,
    GradNewtonian3d,
    Qg3d,
}

impl Builtin {
    pub const ALL: [Builtin; 4] = [
        Builtin::BiotSavart2d,
        Builtin::GradNewtonian2d,
        Builtin::GradNewtonian3d,
        Builtin::Qg3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::BiotSavart2d => "biot-savart-2d",
            Builtin::GradNewtonian2d => "grad-newtonian-2d",
            Builtin::GradNewtonian3d => "grad-newtonian-3d",
            Builtin::Qg3d => "qg-3d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            Builtin::BiotSavart2d | Builtin::GradNewtonian2d => 2,
            Builtin::GradNewtonian3d | Builtin::Qg3d => 3,
        }
    }

    /// Whether the velocity is divergence free (`trace c = 0`).
    pub fn is_solenoidal(self) -> bool {
        matches!(self, Builtin::BiotSavart2d | Builtin::Qg3d)
    }

    fn surface_area(self) -> f64 {
        if self.dim() == 2 {
            2.0 * PI
        } else {
            4.0 * PI
        }
    }
}

type EvalFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type GradFn = dyn Fn(usize, usize, &[f64]) -> f64 + Send + Sync;

/// A user-supplied kernel: pointwise evaluator and derivative evaluator.
pub struct CustomKernel {
    name: String,
    dim: usize,
    parity: Parity,
    eval: Box<EvalFn>,
    grad: Box<GradFn>,
}

#[derive(Clone)]
enum Kind {
    Builtin(Builtin),
    Custom(Arc<CustomKernel>),
}

/// An admissible kernel together with its sign.
#[derive(Clone)]
pub struct KernelSpec {
    kind: Kind,
    sign: f64,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name())
            .field("dim", &self.dim())
            .field("sign", &self.sign)
            .finish()
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl KernelSpec {
    pub fn builtin(b: Builtin) -> Self {
        KernelSpec {
            kind: Kind::Builtin(b),
            sign: 1.0,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Builtin::ALL
            .iter()
            .find(|b| b.name() == name)
            .map(|&b| KernelSpec::builtin(b))
            .ok_or_else(|| {
                Error::domain(format!(
                    "unknown kernel '{name}' (expected one of: {})",
                    Builtin::ALL.map(|b| b.name()).join(", ")
                ))
            })
    }

    /// Register a user kernel. Homogeneity of both evaluators is sampled
    /// before the kernel is accepted.
    pub fn register(
        name: impl Into<String>,
        dim: usize,
        parity: Parity,
        eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        grad: impl Fn(usize, usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::domain(format!("kernel dimension must be 2 or 3, got {dim}")));
        }
        let spec = KernelSpec {
            kind: Kind::Custom(Arc::new(CustomKernel {
                name: name.into(),
                dim,
                parity,
                eval: Box::new(eval),
                grad: Box::new(grad),
            })),
            sign: 1.0,
        };
        let h = spec.homogeneity_residual(64, 0);
        let g = spec.grad_homogeneity_residual(64, 0);
        if !(h <= 1e-10 && g <= 1e-10) {
            return Err(Error::domain(format!(
                "kernel '{}' is not homogeneous of degree -(n-1): residuals {h:e} (k), {g:e} (∂k)",
                spec.name()
            )));
        }
        Ok(spec)
    }

    /// Same kernel multiplied by `sign` (must be `+1` or `-1`).
    pub fn with_sign(mut self, sign: f64) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::domain(format!("kernel_sign must be +1 or -1, got {sign}")));
        }
        self.sign = sign;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        match &self.kind {
            Kind::Builtin(b) => b.name(),
            Kind::Custom(c) => &c.name,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            Kind::Builtin(b) => b.dim(),
            Kind::Custom(c) => c.dim,
        }
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn parity(&self) -> Parity {
        match &self.kind {
            Kind::Builtin(_) => Parity::Odd,
            Kind::Custom(c) => c.parity,
        }
    }

    pub fn as_builtin(&self) -> Option<Builtin> {
        match self.kind {
            Kind::Builtin(b) => Some(b),
            Kind::Custom(_) => None,
        }
    }

    /// `k(x)`; `x` must be nonzero and have the kernel's dimension.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// `∂_i k_j(x)` (0-based indices), pointwise away from the origin.
    pub fn eval_grad_pv(&self, i: usize, j: usize, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let n = self.dim();
        if i >= n || j >= n {
            return Err(Error::domain(format!("derivative index ({i}, {j}) out of range for n = {n}")));
        }
        Ok(self.grad_unchecked(i, j, x))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::domain(format!(
                "point has dimension {} but kernel '{}' has dimension {}",
                x.len(),
                self.name(),
                self.dim()
            )));
        }
        let r2 = norm2(x);
        if r2 == 0.0 {
            return Err(Error::domain("kernel singular at origin"));
        }
        if !r2.is_finite() {
            return Err(Error::domain("non-finite evaluation point"));
        }
        Ok(())
    }

    /// Unchecked evaluation; `x ≠ 0` is the caller's responsibility.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            Kind::Builtin(b) => {
                let r2 = norm2(x);
                match b {
                    Builtin::BiotSavart2d => {
                        let s = self.sign / (2.0 * PI * r2);
                        out[0] = -x[1] * s;
                        out[1] = x[0] * s;
                    }
                    Builtin::GradNewtonian2d => {
                        let s = self.sign / (2.0 * PI * r2);
                        out[0] = x[0] * s;
                        out[1] = x[1] * s;
                    }
                    Builtin::GradNewtonian3d => {
                        let s = self.sign / (4.0 * PI * r2 * r2.sqrt());
                        out[0] = x[0] * s;
                        out[1] = x[1] * s;
                        out[2] = x[2] * s;
                    }
                    Builtin::Qg3d => {
                        let s = self.sign / (4.0 * PI * r2 * r2.sqrt());
                        out[0] = -x[1] * s;
                        out[1] = x[0] * s;
                        out[2] = 0.0;
                    }
                }
            }
            Kind::Custom(c) => {
                (c.eval)(x, out);
                if self.sign != 1.0 {
                    out.iter_mut().for_each(|v| *v *= self.sign);
                }
            }
        }
    }

    /// Built-ins have the form `k(x) = scale·L(x)/|x|ⁿ` with `L` the identity
    /// or the rotation `(-x₂, x₁, 0)`; returns `(scale, rotated)`.
    pub(crate) fn radial_form(&self) -> Option<(f64, bool)> {
        match &self.kind {
            Kind::Builtin(b) => Some((
                self.sign / b.surface_area(),
                matches!(b, Builtin::BiotSavart2d | Builtin::Qg3d),
            )),
            Kind::Custom(_) => None,
        }
    }

    pub(crate) fn grad_unchecked(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Builtin(b) => {
                let n = b.dim();
                let r2 = norm2(x);
                let delta = |a: usize, c: usize| if a == c { 1.0 } else { 0.0 };
                // ∂_i (x_m / |x|^n) = δ_im / |x|^n - n x_i x_m / |x|^(n+2)
                let radial = |m: usize| -> f64 {
                    let rn = r2.powi(n as i32 / 2) * if n == 3 { r2.sqrt() } else { 1.0 };
                    (delta(i, m) - n as f64 * x[i] * x[m] / r2) / rn
                };
                let s = self.sign / b.surface_area();
                let v = match (b, j) {
                    (Builtin::BiotSavart2d | Builtin::Qg3d, 0) => -radial(1),
                    (Builtin::BiotSavart2d | Builtin::Qg3d, 1) => radial(0),
                    (Builtin::Qg3d, _) => 0.0,
                    (_, m) => radial(m),
                };
                s * v
            }
            Kind::Custom(c) => self.sign * (c.grad)(i, j, x),
        }
    }

    /// Max relative homogeneity residual `|k(λx) - λ^{-(n-1)} k(x)| / |k(x)|`
    /// over random `x` with `0.5 ≤ |x| ≤ 2` and `0.1 ≤ λ ≤ 10`.
    pub fn homogeneity_residual(&self, samples: usize, seed: u64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for _ in 0..samples {
            let x = random_point(&mut rng, n);
            let lam: f64 = rng.gen_range(0.1..10.0);
            let xs: Vec<f64> = x.iter().map(|v| v * lam).collect();
            self.eval_into(&x, &mut a);
            self.eval_into(&xs, &mut b);
            let scale = lam.powi(-(n as i32 - 1));
            let num = a
                .iter()
                .zip(&b)
                .map(|(u, v)| (v - scale * u).powi(2))
                .sum::<f64>()
                .sqrt();
            let den = norm2(&a).sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            } else {
                worst = worst.max(num);
            }
        }
        worst
    }

    /// Same check for `∂_i k_j`, which is homogeneous of degree `-n`.
    pub fn grad_homogeneity_residual(&self, samples: usize, seed: u64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x = random_point(&mut rng, n);
            let lam: f64 = rng.gen_range(0.1..10.0);
            let xs: Vec<f64> = x.iter().map(|v| v * lam).collect();
            let scale = lam.powi(-(n as i32));
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let u = self.grad_unchecked(i, j, &x);
                    let v = self.grad_unchecked(i, j, &xs);
                    num += (v - scale * u).powi(2);
                    den += u * u;
                }
            }
            worst = worst.max(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() });
        }
        worst
    }

    /// Max relative deviation between `∂_i k_j` and a central difference of
    /// `k` with the given step, over random points with `0.5 ≤ |x| ≤ 2`.
    pub fn grad_fd_residual(&self, samples: usize, step: f64, seed: u64) -> f64 {
        let n = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed_270b);
        let mut worst = 0.0f64;
        let mut kp = vec![0.0; n];
        let mut km = vec![0.0; n];
        for _ in 0..samples {
            let x = random_point(&mut rng, n);
            let mut scale = 0.0f64;
            let mut diffs = Vec::with_capacity(n * n);
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += step;
                xm[i] -= step;
                self.eval_into(&xp, &mut kp);
                self.eval_into(&xm, &mut km);
                for j in 0..n {
                    let fd = (kp[j] - km[j]) / (2.0 * step);
                    let exact = self.grad_unchecked(i, j, &x);
                    scale = scale.max(exact.abs());
                    diffs.push((fd - exact).abs());
                }
            }
            let err = diffs.into_iter().fold(0.0, f64::max);
            worst = worst.max(if scale > 0.0 { err / scale } else { err });
        }
        worst
    }
}

fn random_point(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let r = norm2(&x).sqrt();
        if (0.5..=2.0).contains(&r) {
            return x;
        }
    }
}

/// The matrix `c_ij = ∫_{|s|=1} k_j(s) s_i dσ(s)` from the distributional
/// derivative `∂_i k_j = p.v. ∂_i k_j + c_ij δ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiracCorrectionMatrix {
    pub c: Vec<Vec<f64>>,
    pub quadrature_order: usize,
    pub estimated_error: f64,
}

impl DiracCorrectionMatrix {
    pub fn trace(&self) -> f64 {
        (0..self.c.len()).map(|i| self.c[i][i]).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i][j]
    }
}

fn c_matrix_at(kernel: &KernelSpec, order: usize) -> Result<Vec<Vec<f64>>> {
    let n = kernel.dim();
    let rule = SphereRule::new(n, order)?;
    let mut c = vec![vec![0.0; n]; n];
    let mut k = vec![0.0; n];
    for (s, w) in rule.nodes.chunks_exact(n).zip(&rule.weights) {
        kernel.eval_into(s, &mut k);
        for i in 0..n {
            for j in 0..n {
                c[i][j] += w * k[j] * s[i];
            }
        }
    }
    Ok(c)
}

fn max_entry_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Absolute floor below which refinement differences are rounding noise.
/// A 3D rule at order 512 sums ~5·10⁵ terms, so accumulated rounding
/// reaches a few 1e-13.
const REFINEMENT_FLOOR: f64 = 1e-11;

/// Surface-quadrature evaluation of the Dirac correction matrix. The error
/// estimate is the change from `order` to `2·order`; a change that grows
/// relative to the `order/2 → order` step (above rounding level) is reported
/// as non-convergent.
pub fn dirac_correction(kernel: &KernelSpec, quadrature_order: usize) -> Result<DiracCorrectionMatrix> {
    if quadrature_order < 4 {
        return Err(Error::domain("quadrature order must be at least 4"));
    }
    let coarse = c_matrix_at(kernel, quadrature_order / 2)?;
    let c = c_matrix_at(kernel, quadrature_order)?;
    let fine = c_matrix_at(kernel, 2 * quadrature_order)?;
    if c.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Dirac correction entry".into()));
    }
    let e_coarse = max_entry_diff(&coarse, &c);
    let e_fine = max_entry_diff(&c, &fine);
    if e_fine > REFINEMENT_FLOOR && e_fine > e_coarse {
        return Err(Error::Numerical(format!(
            "Dirac correction quadrature not converging: change {e_coarse:e} -> {e_fine:e} under refinement"
        )));
    }
    Ok(DiracCorrectionMatrix {
        c,
        quadrature_order,
        estimated_error: e_fine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalMeanReport {
    pub i: usize,
    pub j: usize,
    /// `|∫_{|s|=1} ∂_i k_j dσ|`.
    pub mean: f64,
    pub estimated_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const SPHERICAL_MEAN_TOL: f64 = 1e-8;

/// Verifies the zero-spherical-mean condition on `∂_i k_j` that makes the
/// principal value exist.
pub fn check_spherical_mean_zero(
    kernel: &KernelSpec,
    i: usize,
    j: usize,
    quadrature_order: usize,
) -> Result<SphericalMeanReport> {
    let n = kernel.dim();
    if i >= n || j >= n {
        return Err(Error::domain(format!("index ({i}, {j}) out of range for n = {n}")));
    }
    let at = |order: usize| -> Result<f64> {
        Ok(SphereRule::new(n, order)?.integrate(|s| kernel.grad_unchecked(i, j, s)))
    };
    let m = at(quadrature_order.max(2))?;
    let m2 = at(2 * quadrature_order.max(2))?;
    let mean = m.abs();
    Ok(SphericalMeanReport {
        i,
        j,
        mean,
        estimated_error: (m - m2).abs(),
        tolerance: SPHERICAL_MEAN_TOL,
        passed: mean <= SPHERICAL_MEAN_TOL,
    })
}

/// Machine-readable kernel validation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelValidationReport {
    pub kernel: String,
    pub sign: f64,
    pub homogeneity_residual: f64,
    pub grad_homogeneity_residual: f64,
    pub grad_fd_residual: f64,
    pub spherical_mean_residuals: Vec<SphericalMeanReport>,
    pub c_matrix: Vec<Vec<f64>>,
    pub c_error: f64,
    pub c_trace: f64,
    pub passed: bool,
}

pub const HOMOGENEITY_TOL: f64 = 1e-12;
pub const GRAD_FD_TOL: f64 = 1e-6;
pub const GRAD_FD_STEP: f64 = 1e-5;

pub fn validate_kernel(kernel: &KernelSpec, quadrature_order: usize, seed: u64) -> Result<KernelValidationReport> {
    let n = kernel.dim();
    let homogeneity_residual = kernel.homogeneity_residual(100, seed);
    let grad_homogeneity_residual = kernel.grad_homogeneity_residual(100, seed);
    let grad_fd_residual = kernel.grad_fd_residual(100, GRAD_FD_STEP, seed);
    let mut spherical_mean_residuals = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            spherical_mean_residuals.push(check_spherical_mean_zero(kernel, i, j, quadrature_order)?);
        }
    }
    let c = dirac_correction(kernel, quadrature_order)?;
    let passed = homogeneity_residual <= HOMOGENEITY_TOL
        && grad_homogeneity_residual <= HOMOGENEITY_TOL
        && grad_fd_residual <= GRAD_FD_TOL
        && spherical_mean_residuals.iter().all(|r| r.passed);
    Ok(KernelValidationReport {
        kernel: kernel.name().to_string(),
        sign: kernel.sign(),
        homogeneity_residual,
        grad_homogeneity_residual,
        grad_fd_residual,
        spherical_mean_residuals,
        c_trace: c.trace(),
        c_error: c.estimated_error,
        c_matrix: c.c,
        passed,
    })
}
