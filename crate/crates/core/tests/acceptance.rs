//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; the process fails if any criterion does.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transport_core::config::{Command, RunConfig};
use transport_core::experiments::{
    continuity_sweep, convergence_study, lemma_suite, plateau_mean_radius, zygmund_sweep, ContinuitySweepConfig,
    ConvergenceCase, ConvergenceConfig, SweepReport,
};
use transport_core::fields::Profile;
use transport_core::flow::{FlowProblem, FlowState, HaltReason, MarkerLattice, SimulationConfig};
use transport_core::function_spaces::{holder_seminorm, zygmund_seminorm, SampledField};
use transport_core::kernels::{
    dirac_correction, validate_kernel, GRAD_FD_TOL, HOMOGENEITY_TOL, SPHERICAL_MEAN_TOL,
};
use transport_core::singular_integrals::{convolve_t, dirac_consistency, DifferenceStencil, PVConfig, SingularCellRule};
use transport_core::{runner, Builtin, KernelSpec, Lattice, Result};

type Check = (bool, String);

struct Suite {
    failed: Vec<String>,
}

impl Suite {
    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<Check>) {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {detail} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn kernel_validity() -> Result<Check> {
    let mut ok = true;
    let mut parts = Vec::new();
    for b in Builtin::ALL {
        let r = validate_kernel(&KernelSpec::builtin(b), 256, 0)?;
        let mean = r.spherical_mean_residuals.iter().map(|m| m.mean).fold(0.0, f64::max);
        let pass = r.homogeneity_residual <= HOMOGENEITY_TOL
            && r.grad_homogeneity_residual <= HOMOGENEITY_TOL
            && r.grad_fd_residual <= GRAD_FD_TOL
            && mean <= SPHERICAL_MEAN_TOL;
        ok &= pass;
        parts.push(format!(
            "{} hom {:.1e} fd {:.1e} mean {:.1e}",
            b.name(),
            r.homogeneity_residual.max(r.grad_homogeneity_residual),
            r.grad_fd_residual,
            mean
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn dirac_correction_oracle() -> Result<Check> {
    let (h, t) = (0.5, 1.0 / 3.0);
    let cases: [(Builtin, Vec<Vec<f64>>, f64); 4] = [
        (Builtin::BiotSavart2d, vec![vec![0.0, h], vec![-h, 0.0]], 0.0),
        (Builtin::GradNewtonian2d, vec![vec![h, 0.0], vec![0.0, h]], 1.0),
        (
            Builtin::GradNewtonian3d,
            vec![vec![t, 0.0, 0.0], vec![0.0, t, 0.0], vec![0.0, 0.0, t]],
            1.0,
        ),
        (
            Builtin::Qg3d,
            vec![vec![0.0, t, 0.0], vec![-t, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
            0.0,
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (b, exact, trace) in cases {
        let c = dirac_correction(&KernelSpec::builtin(b), 256)?;
        let err = c
            .c
            .iter()
            .zip(&exact)
            .map(|(r, e)| max_abs_diff(r, e))
            .fold(0.0, f64::max);
        let terr = (c.trace() - trace).abs();
        ok &= err <= 1e-8 && terr <= 1e-8;
        parts.push(format!("{} entry {err:.1e} trace {terr:.1e}", b.name()));
    }
    Ok((ok, parts.join("; ")))
}

fn dirac_consistency_rate() -> Result<Check> {
    let sigma = 0.3;
    let p = Profile::Gaussian {
        amplitude: 1.0,
        sigma,
        radius: 2.5 * sigma,
        center: vec![],
    };
    let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let targets = [[0.0, 0.0], [0.25, 0.125], [-0.375, 0.25], [0.5, -0.25]];
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for b in [Builtin::BiotSavart2d, Builtin::GradNewtonian2d] {
        let k = KernelSpec::builtin(b);
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let mut errs = Vec::new();
            for &h in &hs {
                let lat = Lattice::covering(2, h, p.support_extent() + 3.0 * h)?;
                let nodes: Vec<usize> = targets.iter().map(|x| lat.nearest_node(x).unwrap()).collect();
                let f = SampledField::sample(lat, |x| p.eval(x))?;
                let r = dirac_consistency(&k, i, j, &f, &nodes, &PVConfig::new(h), DifferenceStencil::Forward)?;
                errs.push(r.max_error);
            }
            for w in errs.windows(2) {
                let ratio = w[1] / w[0];
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
    }
    Ok((
        lo >= 0.35 && hi <= 0.65,
        format!("error ratio per halving of (h, ε) in [{lo:.3}, {hi:.3}], required [0.35, 0.65]"),
    ))
}

fn potential_oracle() -> Result<Check> {
    let k = KernelSpec::builtin(Builtin::GradNewtonian2d);
    // three lattice nodes at every resolution and one off-node point
    let targets = [0.5, 0.0, 0.25, 0.25, 0.0, 0.75, -0.3, 0.4];
    let mut errs = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
        let lat = Lattice::covering(2, h, 1.0 + 2.0 * h)?;
        let f = SampledField::sample(lat, |x| if x[0] * x[0] + x[1] * x[1] <= 1.0 { 1.0 } else { 0.0 })?;
        let v = convolve_t(&k, &f, &targets, SingularCellRule::Exclude)?;
        let err = v
            .chunks_exact(2)
            .zip(targets.chunks_exact(2))
            .map(|(v, x)| ((v[0] - x[0] / 2.0).hypot(v[1] - x[1] / 2.0)) / (x[0] / 2.0).hypot(x[1] / 2.0))
            .fold(0.0, f64::max);
        errs.push(err);
    }
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    Ok((
        monotone && errs[2] <= 0.02,
        format!(
            "max relative error {} at h = 1/16, 1/32, 1/64, 1/128 (≤ 2% at 1/64, monotone)",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    ))
}

struct Stationary {
    problem: FlowProblem,
    state: FlowState,
    profile: Profile,
}

fn run_stationary(case: ConvergenceCase, h: f64, dt: f64) -> Result<Stationary> {
    let profile = case.profile();
    let b = case.kernel();
    let markers = MarkerLattice::from_profile(b.dim(), h, &profile, 0.5)?;
    let problem = FlowProblem::new(markers, KernelSpec::builtin(b))?.with_delta(f64::INFINITY);
    let record = problem.simulate(&SimulationConfig::new(dt, 1.0))?;
    assert_eq!(record.halt, HaltReason::Completed);
    Ok(Stationary {
        problem,
        state: record.final_state,
        profile,
    })
}

fn drift(s: &Stationary) -> Result<f64> {
    let n = s.problem.markers.dim();
    let eval = Lattice::covering(n, 1.0 / 23.0, s.profile.support_extent())?;
    let pts = eval.points();
    let rho = s.problem.reconstruct_density(&s.state, &pts)?;
    let worst = pts
        .chunks_exact(n)
        .zip(&rho)
        .map(|(x, r)| (r - s.profile.eval(x)).abs())
        .fold(0.0, f64::max);
    Ok(worst / s.profile.amplitude())
}

fn det_deviation(s: &Stationary) -> f64 {
    s.problem
        .markers
        .sources()
        .iter()
        .map(|&i| (s.state.det[i] - 1.0).abs())
        .fold(0.0, f64::max)
}

fn gradn_plateau_det() -> Result<Check> {
    let case = ConvergenceCase::GradnPatchExponential;
    let profile = case.profile();
    let markers = MarkerLattice::from_profile(2, 1.0 / 64.0, &profile, 0.5)?;
    let problem =
        FlowProblem::new(markers, KernelSpec::builtin(Builtin::GradNewtonian2d))?.with_delta(f64::INFINITY);
    let t = 1.0;
    let record = problem.simulate(&SimulationConfig::new(0.05, t))?;
    let rho0 = problem.markers.rho0();
    let top = rho0.iter().copied().fold(0.0, f64::max);
    let (mut worst, mut count) = (0.0f64, 0);
    for (i, r) in rho0.iter().enumerate() {
        if *r == top {
            let exact = (r * t).exp();
            worst = worst.max((record.final_state.det[i] - exact).abs() / exact);
            count += 1;
        }
    }
    let radius = plateau_mean_radius(&problem, &record.final_state);
    Ok((
        worst <= 0.02 && count > 0,
        format!("max |det DX - e^(ρ₀t)| / e^(ρ₀t) = {worst:.2e} over {count} plateau markers at t = 1 (mean radius {radius:.4})"),
    ))
}

fn picard_and_round_trip() -> Result<Check> {
    let profile = ConvergenceCase::RadialEulerStationary.profile();
    let markers = MarkerLattice::from_profile(2, 1.0 / 16.0, &profile, 0.5)?;
    let problem = FlowProblem::new(markers, KernelSpec::builtin(Builtin::BiotSavart2d))?.with_delta(f64::INFINITY);
    let s0 = problem.initial_state();
    let mut diffs = Vec::new();
    for dt in [0.2, 0.1, 0.05] {
        let a = problem.step_rk4(&s0, dt)?;
        let (b, _) = problem.step_picard(&s0, dt, 1e-13, 50, 1.0)?;
        diffs.push(max_abs_diff(&a.positions, &b.positions));
    }
    let picard_ratios: Vec<f64> = diffs.windows(2).map(|w| w[0] / w[1]).collect();
    let picard_ok = picard_ratios.iter().all(|r| *r >= 8.0 * 0.7);

    let mut errs = Vec::new();
    for dt in [0.1, 0.05] {
        let mut cfg = SimulationConfig::new(dt, 0.5);
        cfg.snapshot_every = 1;
        let record = problem.simulate(&cfg)?;
        errs.push(problem.invert_flow_check(&record)?.max_error);
    }
    let drop = errs[0] / errs[1];
    Ok((
        picard_ok && drop >= 8.0,
        format!(
            "Picard-RK4 one-step difference ratios {} (O(dt³) ⇒ 8); round-trip error {:.2e} → {:.2e}, drop {drop:.1}× (≥ 8)",
            picard_ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", "),
            errs[0],
            errs[1]
        ),
    ))
}

fn norm_estimators() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1500;
    let pts: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = SampledField::scattered(2, pts.clone(), vals.clone())?;
    let gamma = 0.37;
    let fast = holder_seminorm(&f, gamma, 2000)?;
    let mut brute = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (0..2)
                    .map(|k| (pts[2 * i + k] - pts[2 * j + k]) * (pts[2 * i + k] - pts[2 * j + k]))
                    .sum::<f64>()
                    .sqrt();
                brute = brute.max((vals[i] - vals[j]).abs() / d.powf(gamma));
            }
        }
    }
    let mut zyg_abs = Vec::new();
    for dim in [1, 2, 3] {
        let lat = Lattice::centered(dim, 0.125, 6)?;
        let abs = SampledField::sample(lat, |x| x.iter().map(|v| v * v).sum::<f64>().sqrt())?;
        zyg_abs.push(zygmund_seminorm(&abs)?);
    }
    let mut affine = Vec::new();
    for _ in 0..5 {
        let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-64i32..64) as f64 / 16.0).collect();
        let lat = Lattice::centered(2, 0.0625, 12)?;
        let g = SampledField::sample(lat, |x| c[0] + c[1] * x[0] + c[2] * x[1])?;
        affine.push(zygmund_seminorm(&g)?);
    }
    let ok = fast == brute && zyg_abs.iter().all(|z| *z == 2.0) && affine.iter().all(|z| *z == 0.0);
    Ok((
        ok,
        format!(
            "Hölder {fast:e} vs brute force {brute:e} on {n} points; |x| Zygmund (n = 1, 2, 3) {zyg_abs:?}; affine {affine:?}"
        ),
    ))
}

fn sweep_check(r: &SweepReport) -> Check {
    let beta = r.beta.unwrap_or(f64::NAN);
    let r2 = r.r_squared.unwrap_or(f64::NAN);
    let rho = r.spearman.unwrap_or(f64::NAN);
    let decreasing = r.rows.windows(2).all(|w| w[1].output_distance < w[0].output_distance);
    let admissible = r.rows.iter().all(|row| row.admissible_to_t);
    (
        decreasing && admissible && beta > 0.0 && r2 >= 0.9 && rho >= 0.9,
        format!("β = {beta:.3}, r² = {r2:.4}, Spearman = {rho:.3}, strictly decreasing: {decreasing}"),
    )
}

fn determinism() -> Result<Check> {
    let dir = tempfile::tempdir().map_err(|e| transport_core::Error::Numerical(e.to_string()))?;
    let sim = "[solver]\nh = \"1/16\"\ndt = 0.05\nT = 0.2\n[simulate]\ncheckpoint_times = [0.1]\n";
    let mut outputs = Vec::new();
    for (cmd, w, sub) in [
        (Command::Simulate, 1, "s1"),
        (Command::Simulate, 1, "s1b"),
        (Command::Simulate, 2, "s2"),
        (Command::Continuity, 1, "c1"),
        (Command::Continuity, 1, "c1b"),
        (Command::Continuity, 2, "c2"),
    ] {
        let text = if cmd == Command::Simulate { sim } else { "" };
        let mut cfg = RunConfig::parse(cmd, text, &[], dir.path())?;
        cfg.run.worker_count = w;
        cfg.run.output_dir = dir.path().join(sub);
        let m = runner::execute(&cfg)?.manifest;
        let csv: Vec<Vec<u8>> = m
            .files
            .iter()
            .filter(|f| f.name.ends_with(".csv"))
            .map(|f| std::fs::read(dir.path().join(sub).join(&f.name)).unwrap())
            .collect();
        outputs.push(csv);
    }
    let same = outputs[0] == outputs[1] && outputs[1] == outputs[2] && outputs[3] == outputs[4] && outputs[4] == outputs[5];
    let bytes: usize = outputs.iter().flatten().map(Vec::len).sum();
    Ok((
        same,
        format!("simulate and continuity CSVs byte-identical across reruns and 1 vs 2 workers ({bytes} bytes compared)"),
    ))
}

fn main() {
    let mut s = Suite { failed: Vec::new() };
    s.run("kernel validity", kernel_validity);
    s.run("Dirac correction", dirac_correction_oracle);
    s.run("discrete Dirac consistency (forward difference)", dirac_consistency_rate);
    s.run("potential-theory oracle", potential_oracle);
    s.run("stationary Biot-Savart vortex (h = 1/64) drift and det DX", || {
        let r = run_stationary(ConvergenceCase::RadialEulerStationary, 1.0 / 64.0, 0.05)?;
        let (d, j) = (drift(&r)?, det_deviation(&r));
        Ok((d <= 0.02 && j <= 0.02, format!("‖ρ(·,1) - ρ₀‖∞/‖ρ₀‖∞ = {d:.2e}, max |det DX - 1| = {j:.2e}")))
    });
    s.run("stationary QG vortex (h = 1/16) drift and det DX", || {
        let r = run_stationary(ConvergenceCase::QgRadialStationary, 1.0 / 16.0, 0.1)?;
        let (d, j) = (drift(&r)?, det_deviation(&r));
        Ok((d <= 0.02 && j <= 0.02, format!("‖ρ(·,1) - ρ₀‖∞/‖ρ₀‖∞ = {d:.2e}, max |det DX - 1| = {j:.2e}")))
    });
    s.run("∇N Liouville law det DX = e^(ρ₀t)", gradn_plateau_det);
    s.run("∇N patch mean-radius rate = 1/n", || {
        let r = convergence_study(&ConvergenceConfig::default_for(ConvergenceCase::GradnPatchExponential))?;
        let rate = r.patch_rate.unwrap_or(f64::NAN);
        let rel = (rate - 0.5).abs() / 0.5;
        Ok((rel <= 0.01, format!("rate {rate:.6} at h = 1/64, relative error {rel:.2e}")))
    });
    s.run("RK4 self-convergence order", || {
        let r = convergence_study(&ConvergenceConfig::default_for(ConvergenceCase::RadialEulerStationary))?;
        let o = r.temporal_order.unwrap_or(f64::NAN);
        Ok((o >= 3.5, format!("minimum observed temporal order {o:.3} (≥ 3.5)")))
    });
    s.run("Picard vs RK4 and forward/backward round trip", picard_and_round_trip);
    s.run("norm estimators", norm_estimators);
    s.run("lemma suites (200 trials)", || {
        let r = lemma_suite(0, 200, 0.5)?;
        let mut violations = 0;
        let mut worst = 0.0f64;
        let mut ratios_ok = true;
        for suite in &r.inequality_suites {
            violations += suite.constant_free.iter().map(|c| c.violations).sum::<usize>();
            for q in &suite.ratios {
                worst = worst.max(q.max_ratio.max(q.max_ratio_refined));
                ratios_ok &= q.passed;
            }
        }
        for q in &r.sio_ratios {
            worst = worst.max(q.max_ratio.max(q.max_ratio_refined));
            ratios_ok &= q.passed;
        }
        Ok((
            r.passed && violations == 0 && ratios_ok,
            format!("{violations} constant-free violations; worst constant-bearing ratio {worst:.3} (≤ 10, stable within 2×)"),
        ))
    });
    s.run("continuity sweep (Hölder)", || Ok(sweep_check(&continuity_sweep(&ContinuitySweepConfig::default_holder())?)));
    s.run("continuity sweep (Zygmund)", || Ok(sweep_check(&zygmund_sweep(&ContinuitySweepConfig::default_zygmund())?)));
    s.run("determinism", determinism);

    if s.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: {} failed: {}", s.failed.len(), s.failed.join(", "));
        std::process::exit(1);
    }
}
