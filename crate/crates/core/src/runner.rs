//! Executes a [`RunConfig`]: builds the problem, runs it on a worker pool
//! of the configured size and writes the command's outputs plus
//! `manifest.json`. A failed run leaves no partial outputs behind.

use std::path::Path;

use serde::Serialize;

use crate::config::{Command, RunConfig, Rho0Spec};
use crate::error::{Error, Result};
use crate::experiments::{continuity_sweep, convergence_study, lemma_suite, sio_family, zygmund_sweep, NormKind};
use crate::flow::{FlowState, HaltReason, MarkerLattice, TrajectoryRecord, MARGIN_LAYERS};
use crate::function_spaces::{norm_report, SampledField};
use crate::kernels::{validate_kernel, Builtin, KernelSpec};
use crate::lattice::Lattice;
use crate::output::{fmt_f64, fmt_opt, schema, Manifest, OutputDir};
use crate::singular_integrals::{estimate_sio_constants, PVConfig};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result of a run whose outputs were written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// `Some` for simulations that stopped before `T`.
    pub halt: Option<HaltReason>,
}

impl RunOutcome {
    /// 0 on success, 3 when a simulation stopped early.
    pub fn exit_code(&self) -> i32 {
        if self.halt.is_some() {
            3
        } else {
            0
        }
    }
}

/// Runs `cfg` on a pool of `cfg.run.worker_count` threads (all cores when
/// 0). Results do not depend on the worker count.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.worker_count)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let started = now();
    let mut out = OutputDir::create(&cfg.run.output_dir)?;
    let result = pool.install(|| dispatch(cfg, &mut out));
    let halt = match result {
        Ok(h) => h,
        Err(e) => {
            out.abort();
            return Err(e);
        }
    };
    let manifest = Manifest {
        tool: TOOL.to_string(),
        version: VERSION.to_string(),
        command: cfg.command.name().to_string(),
        config: serde_json::to_value(cfg).expect("configuration serializes"),
        started,
        finished: now(),
        halt: halt.map(|h| h.describe().to_string()),
        files: Vec::new(),
    };
    let manifest = out.finish(manifest)?;
    Ok(RunOutcome { manifest, halt })
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn dispatch(cfg: &RunConfig, out: &mut OutputDir) -> Result<Option<HaltReason>> {
    match cfg.command {
        Command::Simulate => return simulate(cfg, out),
        Command::Continuity => continuity(cfg, out)?,
        Command::Convergence => convergence(cfg, out)?,
        Command::Norms => norms(cfg, out)?,
        Command::ValidateKernels => validate_kernels(cfg, out)?,
        Command::ValidateSio => validate_sio(cfg, out)?,
        Command::Lemmas => {
            let report = lemma_suite(cfg.run.seed, cfg.lemmas.trials, cfg.lemmas.gamma)?;
            out.write_json("lemmas.json", &report)?;
        }
    }
    Ok(None)
}

/// Reads a `x_1..x_n,value` CSV (leading `#` lines are ignored) into
/// dimension, point-major coordinates and values.
pub fn read_samples(path: &Path) -> Result<(usize, Vec<f64>, Vec<f64>)> {
    let parse = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let dim = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=dim).map(|k| format!("x_{k}")).chain(["value".to_string()]).collect();
    if !(1..=3).contains(&dim) || header != expected {
        return Err(parse(format!("expected columns x_1..x_n,value with n in 1..=3, got {header:?}")));
    }
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        for (k, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse(format!("record {}: '{cell}' is not a number", line + 1)))?;
            if !v.is_finite() {
                return Err(parse(format!("record {}: non-finite value", line + 1)));
            }
            if k < dim {
                points.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if values.is_empty() {
        return Err(parse("no samples".into()));
    }
    Ok((dim, points, values))
}

/// Marker lattice for the `simulate` command.
pub fn build_markers(cfg: &RunConfig) -> Result<MarkerLattice> {
    let s = &cfg.solver;
    let margin = MARGIN_LAYERS as f64 * s.h;
    match &cfg.simulate.rho0 {
        Rho0Spec::Preset(p) => {
            let need = p.support_extent().max(s.h) + margin + 1e-9 * s.h;
            let extent = cfg.simulate.domain_extent.map_or(need, |e| e.max(need));
            let lattice = Lattice::covering(s.n, s.h, extent)?;
            MarkerLattice::from_fn(lattice, |x| p.eval(x), s.gamma)
        }
        Rho0Spec::Csv { path, .. } => {
            let (dim, points, values) = read_samples(path)?;
            let bad = |m: String| Error::Config(vec![format!("[simulate] rho0 {}: {m}", path.display())]);
            if dim != s.n {
                return Err(bad(format!("{dim}-dimensional samples but n = {}", s.n)));
            }
            let mut ints = Vec::with_capacity(points.len());
            for &x in &points {
                let r = (x / s.h).round();
                if (x / s.h - r).abs() > 1e-6 {
                    return Err(bad(format!("coordinate {x} is not a node of the lattice with spacing h = {}", s.h)));
                }
                ints.push(r as i64);
            }
            let reach = ints.iter().map(|i| i.unsigned_abs()).max().unwrap_or(0) as f64 * s.h;
            let need = reach + margin + 1e-9 * s.h;
            let extent = cfg.simulate.domain_extent.map_or(need, |e| e.max(need));
            let lattice = Lattice::covering(s.n, s.h, extent)?;
            let mut rho0 = vec![0.0; lattice.len()];
            let mut seen = vec![false; lattice.len()];
            for (p, v) in ints.chunks_exact(dim).zip(&values) {
                let idx: Vec<usize> = (0..dim).map(|k| (p[k] - lattice.offset()[k]) as usize).collect();
                let f = lattice.flat(&idx);
                if std::mem::replace(&mut seen[f], true) {
                    return Err(bad(format!("duplicate node {:?}", &p[..dim])));
                }
                rho0[f] = *v;
            }
            MarkerLattice::new(lattice, rho0, s.gamma)
        }
    }
}

fn simulate(cfg: &RunConfig, out: &mut OutputDir) -> Result<Option<HaltReason>> {
    let markers = build_markers(cfg)?;
    let problem = cfg.solver.problem(markers)?;
    let sim = cfg.solver.simulation(&cfg.simulate.checkpoint_times, cfg.simulate.snapshot_every);
    let record = problem.simulate(&sim)?;
    let initial = problem.initial_state();
    write_trajectory(out, &problem.markers, &initial, &record)?;
    #[derive(Serialize)]
    struct Metadata<'a> {
        tool: &'a str,
        version: &'a str,
        config: &'a RunConfig,
        markers: usize,
        sources: usize,
        halt: HaltReason,
        halt_detail: &'a str,
        admissible_time: f64,
        checkpoints: Vec<(f64, usize, f64)>,
    }
    out.write_json(
        "metadata.json",
        &Metadata {
            tool: TOOL,
            version: VERSION,
            config: cfg,
            markers: problem.markers.len(),
            sources: problem.markers.sources().len(),
            halt: record.halt,
            halt_detail: &record.halt_detail,
            admissible_time: record.admissible_time(),
            checkpoints: record
                .checkpoints
                .iter()
                .map(|c| (c.requested_t, c.step, c.state.t))
                .collect(),
        },
    )?;
    Ok((record.halt != HaltReason::Completed).then_some(record.halt))
}

/// `markers.csv` (one row per source marker for the initial state, every
/// checkpoint and snapshot, and the final state; markers with `ρ₀ = 0` are
/// omitted) and `monitors.csv`.
pub fn write_trajectory(
    out: &mut OutputDir,
    markers: &MarkerLattice,
    initial: &FlowState,
    record: &TrajectoryRecord,
) -> Result<()> {
    let n = markers.dim();
    let final_step = record.monitors.last().map_or(0, |m| m.step);
    let mut states: std::collections::BTreeMap<usize, (f64, &[f64], &[f64])> = Default::default();
    states.insert(0, (initial.t, &initial.positions, &initial.det));
    for s in &record.snapshots {
        states.insert(s.step, (s.t, &s.positions, &s.det));
    }
    for c in &record.checkpoints {
        states.insert(c.step, (c.state.t, &c.state.positions, &c.state.det));
    }
    if !record.monitors.is_empty() {
        let f = &record.final_state;
        states.insert(final_step, (f.t, &f.positions, &f.det));
    }
    let lattice = markers.lattice();
    let rows = states.iter().flat_map(|(&step, &(t, pos, det))| {
        markers.sources().iter().map(move |&i| {
            let ic = lattice.integer_coords(i);
            let mut r = Vec::with_capacity(2 * n + 4);
            r.push(step.to_string());
            r.push(fmt_f64(t));
            r.extend(ic[..n].iter().map(i64::to_string));
            r.extend(pos[i * n..(i + 1) * n].iter().map(|x| fmt_f64(*x)));
            r.push(fmt_f64(markers.rho0()[i]));
            r.push(fmt_f64(det[i]));
            r
        })
    });
    out.write_csv("markers.csv", schema::MARKERS, schema::markers_header(n), rows)?;
    let monitors = record.monitors.iter().map(|m| {
        vec![
            m.step.to_string(),
            fmt_f64(m.t),
            fmt_f64(m.min_det),
            fmt_f64(m.max_det),
            fmt_f64(m.phi_norm),
            fmt_f64(m.max_speed),
            m.admissible.to_string(),
        ]
    });
    out.write_csv("monitors.csv", schema::MONITORS, schema::MONITORS_HEADER, monitors)
}

fn continuity(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let sweep = cfg.continuity.sweep(&cfg.solver);
    let report = match sweep.norm_kind {
        NormKind::Holder => continuity_sweep(&sweep)?,
        NormKind::Zygmund => zygmund_sweep(&sweep)?,
    };
    let kind = match report.norm_kind {
        NormKind::Holder => "holder",
        NormKind::Zygmund => "zygmund",
    };
    let rows = report.rows.iter().map(|r| {
        vec![
            fmt_f64(r.epsilon),
            fmt_f64(r.input_distance),
            fmt_f64(r.output_distance),
            fmt_f64(r.flow_distance),
            r.admissible_to_t.to_string(),
            kind.to_string(),
        ]
    });
    out.write_csv("sweep.csv", schema::SWEEP, schema::SWEEP_HEADER, rows)?;
    out.write_json(
        "fit.json",
        &serde_json::json!({
            "norm_kind": kind,
            "beta": report.beta,
            "r_squared": report.r_squared,
            "spearman": report.spearman,
            "monotone": report.monotone,
        }),
    )
}

fn convergence(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let report = convergence_study(&cfg.convergence)?;
    let case = report.case.name();
    let rows = report.rows.iter().map(|r| {
        vec![
            case.to_string(),
            r.study.clone(),
            fmt_f64(r.h),
            fmt_f64(r.dt),
            fmt_f64(r.error),
            fmt_opt(r.order),
        ]
    });
    out.write_csv("orders.csv", schema::ORDERS, schema::ORDERS_HEADER, rows)?;
    out.write_json("convergence.json", &report)
}

fn norms(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let (dim, points, values) = read_samples(&cfg.norms.input)?;
    let field = SampledField::from_samples(dim, points, values)?;
    let report = norm_report(&field, cfg.norms.gamma, cfg.norms.pair_budget, &cfg.norms.h_levels)?;
    out.write_json("norm_report.json", &report)
}

fn validate_kernels(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let names: Vec<String> = if cfg.kernels.kernels.is_empty() {
        Builtin::ALL.iter().map(|b| b.name().to_string()).collect()
    } else {
        cfg.kernels.kernels.clone()
    };
    let reports = names
        .iter()
        .map(|name| {
            let k = KernelSpec::from_name(name)?.with_sign(cfg.kernels.kernel_sign)?;
            validate_kernel(&k, cfg.kernels.quadrature_order, cfg.run.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    out.write_json("kernels.json", &reports)
}

fn validate_sio(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let s = &cfg.sio;
    let kernel = KernelSpec::from_name(&s.kernel)?;
    let family: Vec<_> = sio_family(kernel.dim(), s.h)?
        .into_iter()
        .filter(|(name, _)| s.fields.is_empty() || s.fields.contains(name))
        .collect();
    let mut pv = PVConfig::new(s.h);
    if let Some(e) = s.epsilon {
        pv = pv.with_epsilon(e);
    }
    pv.singular_cell_rule = s.singular_cell_rule;
    let report = estimate_sio_constants(&kernel, s.i, s.j, &family, s.gamma, &pv)?;
    let rows = report.rows.iter().map(|r| {
        vec![
            report.kernel.clone(),
            report.i.to_string(),
            report.j.to_string(),
            r.field_id.clone(),
            fmt_f64(r.epsilon),
            fmt_f64(r.h),
            fmt_f64(r.sup_s),
            fmt_f64(r.seminorm_s),
            fmt_opt(r.implied_c_eps),
            fmt_opt(r.implied_c_sna),
        ]
    });
    out.write_csv("sio.csv", schema::SIO, schema::SIO_HEADER, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::{file_digest, read_csv};

    fn config(cmd: Command, text: &str, dir: &Path) -> RunConfig {
        RunConfig::parse(cmd, text, &[], dir).unwrap()
    }

    #[test]
    fn zero_density_gives_header_only_markers() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(
            Command::Simulate,
            "[solver]\nh = 0.25\ndt = 0.5\nT = 1.0\n[simulate]\nrho0 = { kind = \"zero\" }\n",
            dir.path(),
        );
        let o = execute(&cfg).unwrap();
        assert_eq!(o.exit_code(), 0);
        let m = read_csv(&dir.path().join("out/markers.csv")).unwrap();
        assert!(m.rows.is_empty());
        assert_eq!(m.header, schema::markers_header(2));
        assert_eq!(read_csv(&dir.path().join("out/monitors.csv")).unwrap().rows.len(), 3);
        assert!(dir.path().join("out/manifest.json").exists());
    }

    #[test]
    fn csv_density_must_sit_on_nodes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("rho.csv"), "x_1,x_2,value\n0.0,0.0,1.0\n0.1,0.0,0.5\n").unwrap();
        let cfg = config(
            Command::Simulate,
            "[solver]\nh = 0.25\n[simulate]\nrho0 = { kind = \"csv\", path = \"rho.csv\" }\n",
            dir.path(),
        );
        assert!(matches!(build_markers(&cfg), Err(Error::Config(_))));
        std::fs::write(dir.path().join("rho.csv"), "x_1,x_2,value\n0.0,0.0,1.0\n0.25,0.0,0.5\n").unwrap();
        let m = build_markers(&cfg).unwrap();
        assert_eq!(m.sources().len(), 2);
        assert_eq!(m.rho0().iter().sum::<f64>(), 1.5);
    }

    #[test]
    fn failed_run_leaves_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.csv"), "x_1,value\n").unwrap();
        let cfg = config(Command::Norms, "[norms]\ninput = \"f.csv\"\n", dir.path());
        let e = execute(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(std::fs::read_dir(dir.path().join("out")).unwrap().count(), 0);
    }

    #[test]
    fn simulation_is_reproducible_across_worker_counts() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[solver]\nh = 0.125\ndt = 0.1\nT = 0.3\n[simulate]\ncheckpoint_times = [0.1]\n";
        let mut digests = Vec::new();
        for (w, sub) in [(1, "a"), (2, "b"), (2, "c")] {
            let mut cfg = config(Command::Simulate, text, dir.path());
            cfg.run.worker_count = w;
            cfg.run.output_dir = dir.path().join(sub);
            execute(&cfg).unwrap();
            digests.push(
                ["markers.csv", "monitors.csv"]
                    .map(|f| file_digest(&dir.path().join(sub).join(f)).unwrap()),
            );
        }
        assert_eq!(digests[0], digests[1]);
        assert_eq!(digests[1], digests[2]);
    }
}
