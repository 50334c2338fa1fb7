//! Randomized verification of the Hölder product/composition inequalities
//! and the Zygmund algebra/composition bounds.
//!
//! Constant-free inequalities are asserted pointwise on each trial; those
//! carrying an unspecified constant are reported as empirical ratios and
//! checked against a fixed harness bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{holder_seminorm, zygmund_seminorm, SampledField, DEFAULT_PAIR_BUDGET};
use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Discretization slack for constant-free inequalities (relative to `max(1, rhs)`).
pub const INEQUALITY_TOL: f64 = 1e-9;
/// Harness bound on empirical ratios of constant-bearing inequalities.
pub const RATIO_BOUND: f64 = 10.0;
/// Allowed drift of the worst ratio under one lattice refinement.
pub const REFINEMENT_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl InequalityCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        InequalityCheck {
            name: name.to_string(),
            lhs,
            rhs,
            passed: lhs <= rhs + INEQUALITY_TOL * rhs.abs().max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantFreeSummary {
    pub name: String,
    pub checks: usize,
    pub violations: usize,
    /// Smallest `rhs - lhs` seen.
    pub min_slack: f64,
    /// Trials (by index) that produced a violation; reproducible from the suite seed.
    pub counterexample_trials: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub name: String,
    pub samples: usize,
    pub max_ratio: f64,
    /// Worst ratio of the same trials on the refined lattice.
    pub max_ratio_refined: f64,
    pub bound: f64,
    pub stable: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub suite: String,
    pub trials: usize,
    pub seed: u64,
    pub gamma: f64,
    pub constant_free: Vec<ConstantFreeSummary>,
    pub ratios: Vec<RatioSummary>,
    pub passed: bool,
}

/// Random smooth test function: constant + decaying Fourier modes +
/// Gaussian bumps + optional cones `a|x - c|` (Lipschitz but not C¹).
#[derive(Debug, Clone)]
pub struct RandomField {
    dim: usize,
    constant: f64,
    modes: Vec<(f64, [f64; 3], f64)>,
    bumps: Vec<(f64, [f64; 3], f64)>,
    cones: Vec<(f64, [f64; 3])>,
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, lo: f64, hi: f64) -> [f64; 3] {
    let mut v = [0.0; 3];
    for x in v.iter_mut().take(dim) {
        *x = rng.gen_range(lo..hi);
    }
    v
}

fn dot(a: &[f64; 3], x: &[f64]) -> f64 {
    x.iter().zip(a).map(|(p, q)| p * q).sum()
}

fn dist(a: &[f64; 3], x: &[f64]) -> f64 {
    x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

impl RandomField {
    pub fn generate(rng: &mut ChaCha8Rng, dim: usize, with_cones: bool) -> Self {
        let constant = rng.gen_range(-1.0..1.0);
        let modes = (1..=rng.gen_range(1..=4))
            .map(|k| {
                let amp = rng.gen_range(-1.0..1.0) / k as f64;
                (amp, random_vec(rng, dim, -6.0, 6.0), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let bumps = (0..rng.gen_range(0..=2))
            .map(|_| (rng.gen_range(-1.0..1.0), random_vec(rng, dim, -0.8, 0.8), rng.gen_range(0.1..0.6)))
            .collect();
        let cones = if with_cones {
            (0..rng.gen_range(0..=1))
                .map(|_| (rng.gen_range(-1.0..1.0), random_vec(rng, dim, -0.5, 0.5)))
                .collect()
        } else {
            Vec::new()
        };
        RandomField {
            dim,
            constant,
            modes,
            bumps,
            cones,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut v = self.constant;
        for (a, w, th) in &self.modes {
            v += a * (dot(w, x) + th).sin();
        }
        for (a, c, s) in &self.bumps {
            let r = dist(c, x);
            v += a * (-(r * r) / (s * s)).exp();
        }
        for (a, c) in &self.cones {
            v += a * dist(c, x);
        }
        v
    }
}

/// Random perturbation of the identity `X = e + Mα + Σ b_m sin(q_m·α + θ_m)`
/// with `‖M‖_F + Σ|b_m||q_m| = lip < 1`, hence a diffeomorphism of ℝⁿ.
#[derive(Debug, Clone)]
pub struct RandomDiffeo {
    dim: usize,
    linear: [[f64; 3]; 3],
    waves: Vec<([f64; 3], [f64; 3], f64)>,
    /// Analytic bound on `sup ‖Dφ‖_op`.
    lip: f64,
}

impl RandomDiffeo {
    pub fn identity(dim: usize) -> Self {
        RandomDiffeo {
            dim,
            linear: [[0.0; 3]; 3],
            waves: Vec::new(),
            lip: 0.0,
        }
    }

    pub fn generate(rng: &mut ChaCha8Rng, dim: usize, max_lip: f64) -> Self {
        let mut linear = [[0.0; 3]; 3];
        for row in linear.iter_mut().take(dim) {
            for v in row.iter_mut().take(dim) {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let waves: Vec<_> = (0..rng.gen_range(1..=3))
            .map(|_| {
                (
                    random_vec(rng, dim, -1.0, 1.0),
                    random_vec(rng, dim, -4.0, 4.0),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let raw_lin = linear.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let raw_waves: f64 = waves.iter().map(|(b, q, _)| norm(b) * norm(q)).sum();
        let target = rng.gen_range(0.0..max_lip);
        // split the Lipschitz budget between the linear and oscillatory parts
        let share = rng.gen_range(0.0..0.5);
        let s_lin = if raw_lin > 0.0 { share * target / raw_lin } else { 0.0 };
        let s_wav = if raw_waves > 0.0 { (1.0 - share) * target / raw_waves } else { 0.0 };
        for row in linear.iter_mut() {
            for v in row.iter_mut() {
                *v *= s_lin;
            }
        }
        let waves = waves
            .into_iter()
            .map(|(mut b, q, th)| {
                b.iter_mut().for_each(|v| *v *= s_wav);
                (b, q, th)
            })
            .collect::<Vec<_>>();
        let lip = linear.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
            + waves.iter().map(|(b, q, _)| norm(b) * norm(q)).sum::<f64>();
        RandomDiffeo {
            dim,
            linear,
            waves,
            lip,
        }
    }

    fn phi(&self, a: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = (0..self.dim).map(|j| self.linear[i][j] * a[j]).sum();
        }
        for (b, q, th) in &self.waves {
            let s = (dot(q, a) + th).sin();
            for i in 0..self.dim {
                out[i] += b[i] * s;
            }
        }
    }

    pub fn apply(&self, a: &[f64], out: &mut [f64]) {
        self.phi(a, out);
        for i in 0..self.dim {
            out[i] += a[i];
        }
    }

    /// Jacobian, row-major `n×n`.
    pub fn jacobian(&self, a: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = if i == j { 1.0 } else { 0.0 } + self.linear[i][j];
            }
        }
        for (b, q, th) in &self.waves {
            let c = (dot(q, a) + th).cos();
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] += b[i] * q[j] * c;
                }
            }
        }
    }

    /// Analytic bound on `sup ‖DX‖_op`.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 + self.lip
    }

    /// Solve `X(α) = y` by the contraction `α ← y - φ(α)`.
    pub fn invert(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim;
        out[..n].copy_from_slice(&y[..n]);
        let mut p = [0.0; 3];
        for _ in 0..500 {
            self.phi(&out[..n], &mut p);
            let mut change = 0.0f64;
            for i in 0..n {
                let next = y[i] - p[i];
                change = change.max((next - out[i]).abs());
                out[i] = next;
            }
            if change <= 1e-15 * (1.0 + y.iter().fold(0.0f64, |m, v| m.max(v.abs()))) {
                return Ok(());
            }
        }
        Err(Error::Numerical("inverse map iteration did not converge".into()))
    }

    /// Discrete `‖X‖_{1,γ} = sup|X| + ‖DX‖_∞ + |DX|_γ` on `lattice`, with
    /// `‖DX‖_∞` taken as the analytic operator-norm bound.
    pub fn c1gamma_norm(&self, lattice: &Lattice, gamma: f64) -> Result<f64> {
        let n = self.dim;
        let pts = lattice.points();
        let mut sup = 0.0f64;
        let mut jac = Vec::with_capacity(pts.len() * n);
        let mut x = [0.0; 3];
        let mut jm = [0.0; 9];
        for a in pts.chunks_exact(n) {
            self.apply(a, &mut x);
            sup = x[..n].iter().fold(sup, |m, v| m.max(v.abs()));
            self.jacobian(a, &mut jm);
            jac.extend_from_slice(&jm[..n * n]);
        }
        let field = SampledField::on_lattice_vector(lattice.clone(), jac, n * n)?;
        Ok(sup + self.lipschitz_bound() + holder_seminorm(&field, gamma, DEFAULT_PAIR_BUDGET)?)
    }
}

/// SNprod and SNaAlgebra for two fields on the same points.
pub fn product_checks(f: &SampledField, g: &SampledField, gamma: f64) -> Result<Vec<InequalityCheck>> {
    if f.points() != g.points() || f.components() != 1 || g.components() != 1 {
        return Err(Error::domain("product checks need scalar fields on identical points"));
    }
    let fg: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect();
    let fg = f.with_values(fg, 1)?;
    let (sf, sg) = (f.sup_norm(), g.sup_norm());
    let hf = holder_seminorm(f, gamma, DEFAULT_PAIR_BUDGET)?;
    let hg = holder_seminorm(g, gamma, DEFAULT_PAIR_BUDGET)?;
    let hfg = holder_seminorm(&fg, gamma, DEFAULT_PAIR_BUDGET)?;
    Ok(vec![
        InequalityCheck::new("SNprod", hfg, sf * hg + hf * sg),
        InequalityCheck::new("SNaAlgebra", fg.sup_norm() + hfg, (sf + hf) * (sg + hg)),
    ])
}

/// Result of the composition checks on one trial.
#[derive(Debug, Clone)]
pub struct CompositionOutcome {
    pub checks: Vec<InequalityCheck>,
    /// `‖f∘X⁻¹‖ / (‖f‖(1 + ‖X‖_{1,γ}^{γ(2n-1)}))`.
    pub inverse_ratio: f64,
}

/// SNaComp and NaComp (asserted) and NaCompInversa (ratio) for `f`
/// evaluated analytically and a diffeomorphism `x`, on `lattice`.
pub fn composition_checks(
    f: &dyn Fn(&[f64]) -> f64,
    x: &RandomDiffeo,
    lattice: &Lattice,
    gamma: f64,
) -> Result<CompositionOutcome> {
    let n = lattice.dim();
    let labels = lattice.points();
    let mut image = Vec::with_capacity(labels.len());
    let mut buf = [0.0; 3];
    for a in labels.chunks_exact(n) {
        x.apply(a, &mut buf);
        image.extend_from_slice(&buf[..n]);
    }
    let f_img: Vec<f64> = image.chunks_exact(n).map(f).collect();
    // f on the image points (scattered) and f∘X on the labels carry the same values.
    let f_on_image = SampledField::scattered(n, image, f_img.clone())?;
    let f_comp = SampledField::on_lattice(lattice.clone(), f_img)?;
    let hf_img = holder_seminorm(&f_on_image, gamma, DEFAULT_PAIR_BUDGET)?;
    let hcomp = holder_seminorm(&f_comp, gamma, DEFAULT_PAIR_BUDGET)?;
    let lip = x.lipschitz_bound();
    let xnorm = x.c1gamma_norm(lattice, gamma)?;
    let f_norm_img = f_on_image.sup_norm() + hf_img;

    let mut inv = Vec::with_capacity(labels.len());
    for y in labels.chunks_exact(n) {
        x.invert(y, &mut buf)?;
        inv.push(f(&buf[..n]));
    }
    let f_inv = SampledField::on_lattice(lattice.clone(), inv)?;
    let f_lat = SampledField::sample(lattice.clone(), f)?;
    let lhs_inv = f_inv.sup_norm() + holder_seminorm(&f_inv, gamma, DEFAULT_PAIR_BUDGET)?;
    let base = f_lat.sup_norm() + holder_seminorm(&f_lat, gamma, DEFAULT_PAIR_BUDGET)?;
    let denom = base * (1.0 + xnorm.powf(gamma * (2 * n - 1) as f64));
    let inverse_ratio = if denom > 0.0 { lhs_inv / denom } else { 0.0 };

    Ok(CompositionOutcome {
        checks: vec![
            InequalityCheck::new("SNaComp", hcomp, hf_img * lip.powf(gamma)),
            InequalityCheck::new(
                "NaComp",
                f_comp.sup_norm() + hcomp,
                f_norm_img * (1.0 + xnorm.powf(gamma)),
            ),
        ],
        inverse_ratio,
    })
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

fn summarize(name: &str, checks: &[(usize, InequalityCheck)]) -> ConstantFreeSummary {
    let mut s = ConstantFreeSummary {
        name: name.to_string(),
        checks: 0,
        violations: 0,
        min_slack: f64::INFINITY,
        counterexample_trials: Vec::new(),
    };
    for (trial, c) in checks.iter().filter(|(_, c)| c.name == name) {
        s.checks += 1;
        s.min_slack = s.min_slack.min(c.rhs - c.lhs);
        if !c.passed {
            s.violations += 1;
            s.counterexample_trials.push(*trial);
        }
    }
    if s.checks == 0 {
        s.min_slack = 0.0;
    }
    s
}

fn ratio_summary(name: &str, coarse: &[f64], fine: &[f64]) -> RatioSummary {
    let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(*x));
    let (a, b) = (max(coarse), max(fine));
    let stable = if a == 0.0 && b == 0.0 {
        true
    } else {
        a > 0.0 && b > 0.0 && b / a <= REFINEMENT_FACTOR && a / b <= REFINEMENT_FACTOR
    };
    RatioSummary {
        name: name.to_string(),
        samples: coarse.len(),
        max_ratio: a,
        max_ratio_refined: b,
        bound: RATIO_BOUND,
        stable,
        passed: a.is_finite() && b.is_finite() && a <= RATIO_BOUND && b <= RATIO_BOUND && stable,
    }
}

/// Test lattice on `[-1, 1]²` with `half` nodes on each side of the origin.
fn square(half: usize) -> Result<Lattice> {
    Lattice::centered(2, 1.0 / half as f64, half)
}

/// Coarse and refined resolutions used by the verifiers.
const COARSE_HALF: usize = 10;
const FINE_HALF: usize = 20;

/// Hölder suite: SNprod, SNaAlgebra, SNaComp, NaComp asserted on each
/// trial; NaCompInversa recorded as a ratio.
pub fn verify_holder_inequalities(trials: usize, gamma: f64, seed: u64) -> Result<InequalityReport> {
    super::check_gamma(gamma)?;
    let coarse = square(COARSE_HALF)?;
    let fine = square(FINE_HALF)?;
    let mut checks = Vec::new();
    let (mut inv_c, mut inv_f) = (Vec::new(), Vec::new());
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial);
        let f = RandomField::generate(&mut rng, 2, true);
        let g = RandomField::generate(&mut rng, 2, true);
        let x = RandomDiffeo::generate(&mut rng, 2, 0.6);
        let fs = SampledField::sample(coarse.clone(), |p| f.eval(p))?;
        let gs = SampledField::sample(coarse.clone(), |p| g.eval(p))?;
        for c in product_checks(&fs, &gs, gamma)? {
            checks.push((trial, c));
        }
        let comp = composition_checks(&|p| f.eval(p), &x, &coarse, gamma)?;
        checks.extend(comp.checks.into_iter().map(|c| (trial, c)));
        inv_c.push(comp.inverse_ratio);
        inv_f.push(composition_checks(&|p| f.eval(p), &x, &fine, gamma)?.inverse_ratio);
    }
    let constant_free: Vec<_> = ["SNprod", "SNaAlgebra", "SNaComp", "NaComp"]
        .iter()
        .map(|n| summarize(n, &checks))
        .collect();
    let ratios = if trials > 0 {
        vec![ratio_summary("NaCompInversa", &inv_c, &inv_f)]
    } else {
        Vec::new()
    };
    let passed = constant_free.iter().all(|s| s.violations == 0) && ratios.iter().all(|r| r.passed);
    Ok(InequalityReport {
        suite: "holder".into(),
        trials,
        seed,
        gamma,
        constant_free,
        ratios,
        passed,
    })
}

/// Exponent used for `‖X‖_{1,γ}` in the Zygmund composition bound.
pub const ZYGMUND_SUITE_GAMMA: f64 = 0.5;

/// `‖fg‖_* / (‖f‖_*‖g‖_*)` on one lattice.
pub fn zygmund_algebra_ratio(f: &SampledField, g: &SampledField) -> Result<f64> {
    let fg: Vec<f64> = f.values().iter().zip(g.values()).map(|(a, b)| a * b).collect();
    let fg = f.with_values(fg, 1)?;
    let lhs = fg.sup_norm() + zygmund_seminorm(&fg)?;
    let rhs = (f.sup_norm() + zygmund_seminorm(f)?) * (g.sup_norm() + zygmund_seminorm(g)?);
    Ok(if rhs > 0.0 { lhs / rhs } else { 0.0 })
}

/// `|f∘X|_* / (|f|_*(1 + ‖X‖_{1,γ}))` on one lattice; `None` when `|f|_* = 0`.
pub fn zygmund_composition_ratio(f: &dyn Fn(&[f64]) -> f64, x: &RandomDiffeo, lattice: &Lattice) -> Result<Option<f64>> {
    let n = lattice.dim();
    let mut buf = [0.0; 3];
    let comp: Vec<f64> = lattice
        .points()
        .chunks_exact(n)
        .map(|a| {
            x.apply(a, &mut buf);
            f(&buf[..n])
        })
        .collect();
    let comp = SampledField::on_lattice(lattice.clone(), comp)?;
    let base = zygmund_seminorm(&SampledField::sample(lattice.clone(), f)?)?;
    if base == 0.0 {
        return Ok(None);
    }
    let xnorm = x.c1gamma_norm(lattice, ZYGMUND_SUITE_GAMMA)?;
    Ok(Some(zygmund_seminorm(&comp)? / (base * (1.0 + xnorm))))
}

/// Zygmund suite: both inequalities carry an unspecified constant, so
/// only the empirical ratios are bounded and compared across resolutions.
pub fn verify_zygmund_inequalities(trials: usize, seed: u64) -> Result<InequalityReport> {
    let coarse = square(COARSE_HALF)?;
    let fine = square(FINE_HALF)?;
    let (mut alg_c, mut alg_f, mut comp_c, mut comp_f) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for trial in 0..trials {
        let mut rng = trial_rng(seed ^ 0x5a5a_5a5a, trial);
        let f = RandomField::generate(&mut rng, 2, true);
        let g = RandomField::generate(&mut rng, 2, true);
        let x = RandomDiffeo::generate(&mut rng, 2, 0.6);
        for (lat, alg, comp) in [(&coarse, &mut alg_c, &mut comp_c), (&fine, &mut alg_f, &mut comp_f)] {
            let fs = SampledField::sample(lat.clone(), |p| f.eval(p))?;
            let gs = SampledField::sample(lat.clone(), |p| g.eval(p))?;
            alg.push(zygmund_algebra_ratio(&fs, &gs)?);
            if let Some(r) = zygmund_composition_ratio(&|p| f.eval(p), &x, lat)? {
                comp.push(r);
            }
        }
    }
    let ratios = if trials > 0 {
        vec![ratio_summary("Zalgebra", &alg_c, &alg_f), ratio_summary("comp", &comp_c, &comp_f)]
    } else {
        Vec::new()
    };
    let passed = ratios.iter().all(|r| r.passed);
    Ok(InequalityReport {
        suite: "zygmund".into(),
        trials,
        seed,
        gamma: ZYGMUND_SUITE_GAMMA,
        constant_free: Vec::new(),
        ratios,
        passed,
    })
}
