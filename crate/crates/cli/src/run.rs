use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mimadv::assembly::{mass_q, VelocityModel};
use mimadv::experiments::{
    advect1d, flux_convergence, material_convergence, mesh1d, Advect1DConfig, ConvergenceConfig,
    ConvergenceStudy,
};
use mimadv::mesh::uniform_points;
use mimadv::operators::{build_operator, OperatorKind};
use mimadv::plane2d::{run_tests2d_with, write_snapshot_csv, Test2DConfig, TestKind};
use mimadv::spectral::{
    amplification_spectrum, dispersion, plot_script, stability_circle_script, stability_scan_kind,
    write_dispersion_csv, write_spectrum_csv,
};
use serde::Serialize;

use crate::config::{Experiment, RunConfig};
use crate::error::CliError;

/// What a run leaves behind, besides its files.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub version: &'static str,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
    /// Headline numbers, also printed to stdout.
    pub summary: Vec<(String, f64)>,
}

struct Out {
    dir: PathBuf,
    files: Vec<String>,
    summary: Vec<(String, f64)>,
}

impl Out {
    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(file);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(CliError::io(&path))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn text(&mut self, name: &str, s: &str) -> Result<(), CliError> {
        self.write(name, |w| w.write_all(s.as_bytes()))
    }

    fn note(&mut self, key: impl Into<String>, v: f64) {
        self.summary.push((key.into(), v));
    }
}

/// Runs the configured experiment, writing everything under `cfg.output`.
pub fn execute(cfg: &RunConfig) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.output).map_err(CliError::io(&cfg.output))?;
    let mut out = Out {
        dir: cfg.output.clone(),
        files: Vec::new(),
        summary: Vec::new(),
    };
    match cfg.experiment {
        Experiment::ConvergeFlux | Experiment::ConvergeMaterial => converge(cfg, &mut out)?,
        Experiment::Advect1d => run_advect1d(cfg, &mut out)?,
        Experiment::Dispersion => run_dispersion(cfg, &mut out)?,
        Experiment::Stability => run_stability(cfg, &mut out)?,
        Experiment::Advect2d => run_advect2d(cfg, &mut out)?,
    }
    let manifest = Manifest {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION"),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs: out.files,
        summary: out.summary,
    };
    let path = cfg.output.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(CliError::io(&path))?;
    Ok(manifest)
}

fn converge(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let mut c = ConvergenceConfig::new(cfg.p, cfg.ne.clone());
    c.dt_over_ne = cfg.dt_over_ne;
    c.upwind_factor = cfg.upwind_factor;
    c.quadrature = cfg.quadrature;
    let study: ConvergenceStudy = match cfg.experiment {
        Experiment::ConvergeFlux => flux_convergence(&c)?,
        _ => material_convergence(&c)?,
    };
    out.write("convergence.csv", |w| study.write_csv(w))?;
    out.text("plot_convergence.py", CONVERGENCE_PLOT)?;
    out.note("slope_original", study.slope_original);
    out.note("slope_pg", study.slope_pg);
    Ok(())
}

const CONVERGENCE_PLOT: &str = "import numpy as np
import matplotlib.pyplot as plt

rows = [l.strip().split(',') for l in open('convergence.csv')][1:]
data = np.array([[float(v) for v in r] for r in rows if r[0] != 'slope'])
fig, ax = plt.subplots()
ax.loglog(data[:, 0], data[:, 1], 'o-', label='original')
ax.loglog(data[:, 0], data[:, 2], 's--', label='upwinded')
ax.set_xlabel('n_e'); ax.set_ylabel('L2 error'); ax.legend()
fig.savefig('convergence.png', dpi=150)
";

fn run_advect1d(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let a = Advect1DConfig {
        p: cfg.p,
        n_elements: cfg.ne[0],
        length: cfg.length,
        u: cfg.u,
        dt: cfg.dt,
        t_final: cfg.t_final,
        operator: cfg.operator,
        scheme: cfg.scheme,
        upwind_factor: cfg.upwind_factor,
        quadrature: cfg.quadrature,
        record_every: cfg.record_every,
    };
    let mesh = a.mesh()?;
    let run = advect1d(&mesh, &a)?;
    let xs = uniform_points(cfg.length, 8 * mesh.dim_q());
    out.write("final_state.csv", |w| {
        run.final_field.write_samples_csv(w, &xs)
    })?;
    out.write("diagnostics.csv", |w| run.history.write_csv(w))?;
    out.text("plot_advect1d.py", ADVECT1D_PLOT)?;
    let d = run.final_field.diagnostics();
    out.note("mass_drift", run.history.max_relative_mass_drift());
    out.note(
        "energy_deviation",
        run.history.max_relative_energy_deviation(),
    );
    out.note("total_variation", d.total_variation);
    Ok(())
}

const ADVECT1D_PLOT: &str = "import numpy as np
import matplotlib.pyplot as plt

s = np.genfromtxt('final_state.csv', delimiter=',', names=True)
d = np.genfromtxt('diagnostics.csv', delimiter=',', names=True)
fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
a.plot(s['x'], s['value'])
a.set_xlabel('x'); a.set_ylabel('q')
b.plot(d['time'], (d['energy'] - d['energy'][0]) / d['energy'][0])
b.set_xlabel('t'); b.set_ylabel('relative energy change')
fig.savefig('advect1d.png', dpi=150)
";

const DISPERSION_KINDS: [OperatorKind; 3] = [OperatorKind::A, OperatorKind::APg, OperatorKind::BPg];

fn run_dispersion(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let mesh = mesh1d(cfg.ne[0], cfg.length, cfg.p, cfg.quadrature)?;
    let mut names = Vec::new();
    for kind in DISPERSION_KINDS {
        let recs = dispersion(&mesh, kind, cfg.u, cfg.dt)?;
        let name = format!("dispersion_{}.csv", kind.name());
        out.write(&name, |w| write_dispersion_csv(w, &recs))?;
        out.note(
            format!("min_omega_re_{}", kind.name()),
            mimadv::spectral::min_growth_rate(&recs),
        );
        out.note(
            format!("max_gap_jump_{}", kind.name()),
            mimadv::spectral::max_gap_jump(&recs),
        );
        names.push(name);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    out.text("plot_dispersion.py", &plot_script(&refs, &[]))
}

fn run_stability(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let mesh = mesh1d(cfg.ne[0], cfg.length, cfg.p, cfg.quadrature)?;
    // CFL = dt |u| n_e p / L, spaced evenly up to cfl_max
    let dt_unit = cfg.length / (cfg.u.abs() * mesh.dim_q() as f64);
    let grid: Vec<f64> = (1..=cfg.cfl_steps)
        .map(|i| cfg.cfl_max * i as f64 / cfg.cfl_steps as f64 * dt_unit)
        .collect();
    let vel = VelocityModel::Constant(cfg.u);
    let m = mass_q(&mesh);
    let (mut scans, mut spectra) = (Vec::new(), Vec::new());
    for kind in [OperatorKind::A, OperatorKind::APg] {
        let scan = stability_scan_kind(&mesh, kind, cfg.u, &grid)?;
        let name = format!("stability_{}.csv", kind.name());
        out.write(&name, |w| scan.write_csv(w))?;
        out.note(
            format!("max_abs_omega_{}", kind.name()),
            scan.max_magnitude(),
        );
        scans.push(name);

        let op = build_operator(kind, &mesh, &vel, cfg.dt, cfg.upwind_factor)?;
        let values = amplification_spectrum(&m, &op.matrix, cfg.dt)?;
        let name = format!("amplification_{}.csv", kind.name());
        out.write(&name, |w| write_spectrum_csv(w, &values))?;
        spectra.push(name);
    }
    let refs: Vec<&str> = scans.iter().map(String::as_str).collect();
    out.text("plot_stability.py", &plot_script(&[], &refs))?;
    let refs: Vec<&str> = spectra.iter().map(String::as_str).collect();
    out.text("plot_amplification.py", &stability_circle_script(&refs))
}

fn run_advect2d(cfg: &RunConfig, out: &mut Out) -> Result<(), CliError> {
    let ne = cfg.ne[0];
    let mut t = match cfg.test {
        TestKind::Translation => Test2DConfig::translation(ne, cfg.p, cfg.dt),
        TestKind::Deformational => {
            Test2DConfig::deformational(ne, cfg.p, cfg.dt, cfg.period, cfg.upwind)
        }
    };
    t.period = cfg.period;
    t.t_final = cfg.t_final;
    t.upwind = cfg.upwind;
    t.samples_per_line = cfg.samples_per_line;
    t.snapshot_every = cfg.snapshot_every;
    let m = cfg.samples_per_line * ne * cfg.p;
    let dir = out.dir.clone();
    let mut written = Vec::new();
    let mut io_failure = None;
    let result = run_tests2d_with(&t, |step, mesh, q| {
        let name = format!("snapshot_{step:06}.csv");
        let path = dir.join(&name);
        if let Err(e) = write_file(&path, |w| write_snapshot_csv(w, mesh, q, m)) {
            io_failure = Some(CliError::io(&path)(e));
            // stops the run; the real cause is kept above
            return Err(mimadv::Error::InvalidArgument(
                "snapshot not written".into(),
            ));
        }
        written.push(name);
        Ok(())
    });
    let report = match result {
        Ok(r) => r,
        Err(e) => return Err(io_failure.unwrap_or_else(|| e.into())),
    };
    out.files.extend(written);
    out.write("report.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    out.note("max_relative_mass_error", report.max_relative_mass_error);
    out.note("tv_final", report.tv_final);
    if let Some(e) = report.l2_error {
        out.note("l2_error", e);
    }
    Ok(())
}

fn write_file(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    body(&mut w)?;
    w.flush()
}
