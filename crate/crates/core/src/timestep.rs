//! Time integrators: the centered (trapezoidal) implicit scheme and the
//! explicit three-stage Runge-Kutta scheme.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::mass_q;
use crate::error::{Error, Result};
use crate::linalg::{DenseLu, LinearOperator};
use crate::mesh::{diagnostics, Field, Space};
use crate::operators::AdvectionOperator;

/// Relative residual demanded of the centered-scheme linear solve.
pub const SOLVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Centered,
    Rk3,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "centered" | "centred" => Ok(Scheme::Centered),
            "rk3" => Ok(Scheme::Rk3),
            other => Err(Error::InvalidArgument(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLoopConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub scheme: Scheme,
    /// Diagnostics are recorded every this many steps (and at the last step).
    pub record_every: usize,
}

impl TimeLoopConfig {
    pub fn new(dt: f64, n_steps: usize, scheme: Scheme) -> Self {
        Self {
            dt,
            n_steps,
            scheme,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dt = {} must be positive",
                self.dt
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument(
                "record_every must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// The centered one-step map `(M + Δt/2 K)⁻¹ (M − Δt/2 K)` with cached
/// factors.
#[derive(Debug, Clone)]
pub struct CenteredStepper {
    lhs: DenseLu,
    rhs: DMatrix<f64>,
    identity: bool,
}

impl CenteredStepper {
    pub fn new(m: &LinearOperator, k: &LinearOperator, dt: f64) -> Result<Self> {
        let m = m.to_dense();
        let k = k.to_dense();
        if m.shape() != k.shape() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: k.nrows(),
            });
        }
        let lhs = DenseLu::new(&m + &k * (0.5 * dt), "centered system matrix")?;
        let rhs = &m - &k * (0.5 * dt);
        let identity = dt == 0.0 || k.iter().all(|v| *v == 0.0);
        Ok(Self { lhs, rhs, identity })
    }

    pub fn step(&self, q: &[f64]) -> Result<Vec<f64>> {
        if self.identity {
            return Ok(q.to_vec());
        }
        let b = &self.rhs * DVector::from_column_slice(q);
        let b = b.as_slice();
        let mut x = self.lhs.solve(b)?;
        let mut res = self.lhs.relative_residual(&x, b);
        if res > SOLVE_TOLERANCE {
            // one sweep of iterative refinement
            let ax = self.lhs.matrix() * DVector::from_column_slice(&x);
            let r: Vec<f64> = b.iter().zip(ax.iter()).map(|(b, a)| b - a).collect();
            let dx = self.lhs.solve(&r)?;
            x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
            res = self.lhs.relative_residual(&x, b);
        }
        if res > SOLVE_TOLERANCE {
            return Err(Error::NoConvergence {
                iterations: 1,
                residual: res,
            });
        }
        Ok(x)
    }
}

/// A single centered step; builds the factors on every call; use
/// [`CenteredStepper`] in loops.
pub fn step_centered(
    m: &LinearOperator,
    k: &LinearOperator,
    q: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    CenteredStepper::new(m, k, dt)?.step(q)
}

/// One step of the three-stage scheme.
///
/// `y(t, q)` returns the premultiplied tendency so that `q̇ = −y`; it is
/// evaluated at `t`, `t + Δt` and `t + Δt/2`.
pub fn step_rk3<F>(q: &[f64], t: f64, dt: f64, mut y: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let y0 = y(t, q)?;
    let q1: Vec<f64> = q.iter().zip(&y0).map(|(q, a)| q - dt * a).collect();
    let y1 = y(t + dt, &q1)?;
    let q2: Vec<f64> = q
        .iter()
        .zip(y0.iter().zip(&y1))
        .map(|(q, (a, b))| q - 0.25 * dt * (a + b))
        .collect();
    let y2 = y(t + 0.5 * dt, &q2)?;
    Ok(q.iter()
        .enumerate()
        .map(|(i, q)| q - dt / 6.0 * (y0[i] + y1[i] + 4.0 * y2[i]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    pub total_variation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,time,mass,energy,total_variation")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.17e},{:.17e},{:.17e}",
                r.step, r.time, r.mass, r.energy, r.total_variation
            )?;
        }
        Ok(())
    }

    /// Largest `|mass − mass₀| / |mass₀|` over the run.
    pub fn max_relative_mass_drift(&self) -> f64 {
        relative_spread(self.rows.iter().map(|r| r.mass))
    }

    /// Largest `|energy − energy₀| / energy₀` over the run.
    pub fn max_relative_energy_deviation(&self) -> f64 {
        relative_spread(self.rows.iter().map(|r| r.energy))
    }
}

fn relative_spread(mut it: impl Iterator<Item = f64>) -> f64 {
    let Some(first) = it.next() else {
        return 0.0;
    };
    let scale = first.abs().max(f64::MIN_POSITIVE);
    it.map(|v| (v - first).abs() / scale).fold(0.0, f64::max)
}

#[derive(Debug, Clone)]
pub struct RunOutput<'m> {
    pub history: History,
    pub final_field: Field<'m>,
}

/// Advances `q0` with a fixed 1D operator (`M q̇ + K q = 0`).
pub fn run<'m>(
    config: &TimeLoopConfig,
    op: &AdvectionOperator,
    q0: &Field<'m>,
) -> Result<RunOutput<'m>> {
    config.validate()?;
    if q0.space() != Space::Q {
        return Err(Error::InvalidArgument(
            "initial field must be in the edge space".into(),
        ));
    }
    let mesh = q0.mesh();
    if op.dim() != mesh.dim_q() {
        return Err(Error::DimensionMismatch {
            expected: mesh.dim_q(),
            found: op.dim(),
        });
    }
    let coeffs = match config.scheme {
        Scheme::Centered => {
            let stepper = CenteredStepper::new(&mass_q(mesh), &op.matrix, config.dt)?;
            run_with(
                config,
                q0.coeffs(),
                |q, _| stepper.step(q),
                |q| diagnostics(mesh, q),
            )?
        }
        Scheme::Rk3 => run_with(
            config,
            q0.coeffs(),
            |q, t| {
                step_rk3(q, t, config.dt, |_, x| {
                    mesh.solve_mass_q(&op.matrix.apply(x))
                })
            },
            |q| diagnostics(mesh, q),
        )?,
    };
    Ok(RunOutput {
        history: coeffs.1,
        final_field: Field::new(mesh, Space::Q, coeffs.0)?,
    })
}

/// Generic loop: `step(q, t)` advances one step from time `t`, `diag(q)`
/// returns `(mass, energy, total_variation)`.
pub fn run_with<S, D>(
    config: &TimeLoopConfig,
    q0: &[f64],
    mut step: S,
    diag: D,
) -> Result<(Vec<f64>, History)>
where
    S: FnMut(&[f64], f64) -> Result<Vec<f64>>,
    D: Fn(&[f64]) -> crate::mesh::Diagnostics,
{
    config.validate()?;
    let record = |step: usize, q: &[f64]| {
        let d = diag(q);
        HistoryRow {
            step,
            time: step as f64 * config.dt,
            mass: d.mass,
            energy: d.energy,
            total_variation: d.total_variation,
        }
    };
    let mut history = History::default();
    history.rows.push(record(0, q0));
    let mut q = q0.to_vec();
    for n in 1..=config.n_steps {
        q = step(&q, (n - 1) as f64 * config.dt)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite state after step {n}"
            )));
        }
        if n % config.record_every == 0 || n == config.n_steps {
            history.rows.push(record(n, &q));
        }
    }
    Ok((q, history))
}
