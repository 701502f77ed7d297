//! Reference experiments: manufactured-solution convergence studies, 1D
//! advection runs and the least-squares order fit.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::VelocityModel;
use crate::departure::DisplacementField;
use crate::error::{Error, Result};
use crate::mesh::{project_to_q, Field, PeriodicMesh1D, Space};
use crate::operators::{
    build_b, build_b_pg_with_factor, build_operator, solve_flux, tendency, OperatorKind,
};
use crate::timestep::{run, RunOutput, Scheme, TimeLoopConfig};

/// Double tanh front: rises near `x = 0.4`, falls near `x = 0.6`.
pub fn tanh_profile(x: f64) -> f64 {
    if x < 0.5 {
        0.5 + 0.5 * (200.0 * (x - 0.4)).tanh()
    } else {
        0.5 + 0.5 * (200.0 * (0.6 - x)).tanh()
    }
}

/// `q = ½(1 − cos 2πx)`
pub fn manufactured_tracer(x: f64) -> f64 {
    0.5 * (1.0 - (2.0 * PI * x).cos())
}

pub fn manufactured_tracer_slope(x: f64) -> f64 {
    PI * (2.0 * PI * x).sin()
}

/// `u = 0.4 + 0.2(1 + sin 2πx)`
pub fn manufactured_velocity(x: f64) -> f64 {
    0.4 + 0.2 * (1.0 + (2.0 * PI * x).sin())
}

/// Unit-length mesh with an optional quadrature override.
pub fn mesh1d(
    n_elements: usize,
    length: f64,
    p: usize,
    quadrature: Option<usize>,
) -> Result<PeriodicMesh1D> {
    match quadrature {
        Some(q) => PeriodicMesh1D::with_quadrature(n_elements, length, p, q),
        None => PeriodicMesh1D::new(n_elements, length, p),
    }
}

/// Least-squares slope of `log(error)` against `log(1/n_e)`.
pub fn fit_convergence(n_elements: &[usize], errors: &[f64]) -> Result<f64> {
    if n_elements.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: n_elements.len(),
            found: errors.len(),
        });
    }
    if n_elements.len() < 3 {
        return Err(Error::InvalidArgument("need at least 3 resolutions".into()));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidArgument(
            "errors must be positive and finite".into(),
        ));
    }
    if n_elements.contains(&0) {
        return Err(Error::InvalidArgument(
            "resolutions must be positive".into(),
        ));
    }
    let xs: Vec<f64> = n_elements.iter().map(|&n| -(n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "resolutions must not all be equal".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n_elements: usize,
    pub error_original: f64,
    pub error_pg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub p: usize,
    pub rows: Vec<ConvergenceRow>,
    pub slope_original: f64,
    pub slope_pg: f64,
}

impl ConvergenceStudy {
    fn from_rows(p: usize, rows: Vec<ConvergenceRow>) -> Result<Self> {
        let ne: Vec<usize> = rows.iter().map(|r| r.n_elements).collect();
        let a: Vec<f64> = rows.iter().map(|r| r.error_original).collect();
        let b: Vec<f64> = rows.iter().map(|r| r.error_pg).collect();
        Ok(Self {
            p,
            slope_original: fit_convergence(&ne, &a)?,
            slope_pg: fit_convergence(&ne, &b)?,
            rows,
        })
    }

    /// `ne,error_original,error_pg` followed by a `slope` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ne,error_original,error_pg")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e}",
                r.n_elements, r.error_original, r.error_pg
            )?;
        }
        writeln!(w, "slope,{:.6},{:.6}", self.slope_original, self.slope_pg)
    }
}

/// Settings shared by the manufactured convergence studies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub p: usize,
    pub n_elements: Vec<usize>,
    /// `Δt = dt_over_ne / n_e` sets the upwinding displacement.
    pub dt_over_ne: f64,
    pub upwind_factor: f64,
    pub quadrature: Option<usize>,
}

impl ConvergenceConfig {
    pub fn new(p: usize, n_elements: Vec<usize>) -> Self {
        Self {
            p,
            n_elements,
            dt_over_ne: 0.1,
            upwind_factor: 1.0,
            quadrature: None,
        }
    }
}

fn sweep(
    cfg: &ConvergenceConfig,
    one: impl Fn(&PeriodicMesh1D, &VelocityModel, f64) -> Result<(f64, f64)> + Sync,
) -> Result<ConvergenceStudy> {
    let rows = cfg
        .n_elements
        .par_iter()
        .map(|&ne| {
            let mesh = mesh1d(ne, 1.0, cfg.p, cfg.quadrature)?;
            let vel = VelocityModel::analytic(manufactured_velocity);
            let (error_original, error_pg) = one(&mesh, &vel, cfg.dt_over_ne / ne as f64)?;
            Ok(ConvergenceRow {
                n_elements: ne,
                error_original,
                error_pg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ConvergenceStudy::from_rows(cfg.p, rows)
}

/// L² error of the flux `F ≈ uq`, Galerkin and upwinded.
pub fn flux_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceStudy> {
    let exact = |x: f64| manufactured_velocity(x) * manufactured_tracer(x);
    sweep(cfg, |mesh, vel, dt| {
        let q = project_to_q(mesh, manufactured_tracer)?;
        let shift = DisplacementField::downstream(dt, vel).with_factor(cfg.upwind_factor);
        let f = solve_flux(mesh, vel, &q, None)?;
        let f_pg = solve_flux(mesh, vel, &q, Some(&shift))?;
        Ok((f.l2_error(exact, 2), f_pg.l2_error(exact, 2)))
    })
}

/// L² error of `M⁻¹ B q ≈ u ∂q/∂x` for `B` and `B_PG`.
pub fn material_convergence(cfg: &ConvergenceConfig) -> Result<ConvergenceStudy> {
    let exact = |x: f64| manufactured_velocity(x) * manufactured_tracer_slope(x);
    sweep(cfg, |mesh, vel, dt| {
        let q = project_to_q(mesh, manufactured_tracer)?;
        let mut errors = [0.0; 2];
        let ops = [
            build_b(mesh, vel)?,
            build_b_pg_with_factor(mesh, vel, dt, cfg.upwind_factor)?,
        ];
        for (err, op) in errors.iter_mut().zip(&ops) {
            let y = Field::new(mesh, Space::Q, tendency(mesh, op, q.coeffs())?)?;
            *err = y.l2_error(exact, 2);
        }
        Ok((errors[0], errors[1]))
    })
}

/// A constant-velocity 1D advection run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Advect1DConfig {
    pub p: usize,
    pub n_elements: usize,
    pub length: f64,
    pub u: f64,
    pub dt: f64,
    pub t_final: f64,
    pub operator: OperatorKind,
    pub scheme: Scheme,
    pub upwind_factor: f64,
    pub quadrature: Option<usize>,
    pub record_every: usize,
}

impl Advect1DConfig {
    /// Tanh fronts, `p = 5`, 20 elements, `u = 0.4`, `Δt = 0.005`, one revolution.
    pub fn tanh(operator: OperatorKind) -> Self {
        Self {
            p: 5,
            n_elements: 20,
            length: 1.0,
            u: 0.4,
            dt: 0.005,
            t_final: 2.5,
            operator,
            scheme: Scheme::Centered,
            upwind_factor: 1.0,
            quadrature: None,
            record_every: 1,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }

    /// Time for one crossing of the domain.
    pub fn revolution(&self) -> f64 {
        self.length / self.u.abs()
    }

    pub fn mesh(&self) -> Result<PeriodicMesh1D> {
        mesh1d(self.n_elements, self.length, self.p, self.quadrature)
    }
}

/// Advects the tanh profile (scaled to the domain) with `cfg`.
pub fn advect1d<'m>(mesh: &'m PeriodicMesh1D, cfg: &Advect1DConfig) -> Result<RunOutput<'m>> {
    if !cfg.u.is_finite() || cfg.u == 0.0 {
        return Err(Error::InvalidArgument(
            "u must be finite and non-zero".into(),
        ));
    }
    let vel = VelocityModel::Constant(cfg.u);
    let op = build_operator(cfg.operator, mesh, &vel, cfg.dt, cfg.upwind_factor)?;
    let l = cfg.length;
    let q0 = project_to_q(mesh, |x| tanh_profile(x / l))?;
    let mut loop_cfg = TimeLoopConfig::new(cfg.dt, cfg.n_steps(), cfg.scheme);
    loop_cfg.record_every = cfg.record_every;
    run(&loop_cfg, &op, &q0)
}
