//! Displaced local coordinates of quadrature points along velocity
//! characteristics, used to upwind test functions and downwind trial
//! functions.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::assembly::VelocityModel;
use crate::mesh::PeriodicMesh1D;

/// Displacements beyond this magnitude (local units) trigger a warning.
pub const DISPLACEMENT_WARN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `ξ^d = ξ + Δt |J|⁻¹ u`
    Downstream,
    /// `ξ^u = ξ − Δt |J|⁻¹ u`
    Upstream,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Downstream => 1.0,
            Direction::Upstream => -1.0,
        }
    }
}

/// Characteristic integrator for the pseudo-time integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    /// Single forward Euler step: the integrand is frozen at `s = 0`.
    #[default]
    Euler,
}

#[derive(Debug)]
pub struct DisplacementField<'v> {
    pub direction: Direction,
    pub dt: f64,
    pub velocity: &'v VelocityModel,
    pub integrator: Integrator,
    /// Multiplier on the upwinding distance; 1.0 by default.
    pub factor: f64,
    warned: AtomicBool,
}

impl<'v> DisplacementField<'v> {
    pub fn new(direction: Direction, dt: f64, velocity: &'v VelocityModel) -> Self {
        Self {
            direction,
            dt,
            velocity,
            integrator: Integrator::Euler,
            factor: 1.0,
            warned: AtomicBool::new(false),
        }
    }

    pub fn downstream(dt: f64, velocity: &'v VelocityModel) -> Self {
        Self::new(Direction::Downstream, dt, velocity)
    }

    pub fn upstream(dt: f64, velocity: &'v VelocityModel) -> Self {
        Self::new(Direction::Upstream, dt, velocity)
    }

    pub fn with_factor(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    /// Signed time step including direction and tuning factor.
    pub fn signed_dt(&self) -> f64 {
        self.direction.sign() * self.factor * self.dt
    }

    /// Displaced local coordinate of `ξ` in element `e`. The result may lie
    /// outside `[-1, 1]`; no clamping is applied.
    pub fn displace(&self, mesh: &PeriodicMesh1D, e: usize, xi: f64) -> f64 {
        let u = self.velocity.eval(mesh, e, xi);
        let out = match self.integrator {
            Integrator::Euler => xi + self.signed_dt() * u / mesh.jacobian(),
        };
        if out.abs() > DISPLACEMENT_WARN && !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!(
                "displaced coordinate {out:.3} exceeds {DISPLACEMENT_WARN}; shifted mass matrix may be ill-conditioned"
            );
        }
        out
    }

    /// Same field with the direction reversed.
    pub fn reversed(&self) -> Self {
        let direction = match self.direction {
            Direction::Downstream => Direction::Upstream,
            Direction::Upstream => Direction::Downstream,
        };
        Self {
            direction,
            dt: self.dt,
            velocity: self.velocity,
            integrator: self.integrator,
            factor: self.factor,
            warned: AtomicBool::new(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_velocity_is_identity() {
        let mesh = build_mesh(4, 1.0, 3).unwrap();
        let u = VelocityModel::Constant(0.0);
        let d = DisplacementField::downstream(0.3, &u);
        assert_eq!(d.displace(&mesh, 1, 0.25), 0.25);
        let u = VelocityModel::Constant(2.0);
        let d = DisplacementField::downstream(0.0, &u);
        assert_eq!(d.displace(&mesh, 1, -0.5), -0.5);
    }

    #[test]
    fn reference_shift() {
        let mesh = build_mesh(20, 1.0, 3).unwrap();
        let u = VelocityModel::Constant(0.4);
        let down = DisplacementField::downstream(0.005, &u);
        let up = DisplacementField::upstream(0.005, &u);
        for xi in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            assert_abs_diff_eq!(down.displace(&mesh, 3, xi), xi + 0.08, epsilon = 1e-14);
            assert_abs_diff_eq!(up.displace(&mesh, 3, xi), xi - 0.08, epsilon = 1e-14);
        }
    }

    #[test]
    fn large_shift_is_not_clamped() {
        let mesh = build_mesh(20, 1.0, 3).unwrap();
        let u = VelocityModel::Constant(1.0);
        let d = DisplacementField::downstream(0.1, &u);
        assert_abs_diff_eq!(d.displace(&mesh, 0, 0.5), 4.5, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn antisymmetry(u in -2.0f64..2.0, dt in 0.0f64..0.05, xi in -1.0f64..1.0, e in 0usize..8) {
            let mesh = build_mesh(8, 1.0, 3).unwrap();
            let plus = VelocityModel::Constant(u);
            let minus = VelocityModel::Constant(-u);
            let a = DisplacementField::downstream(dt, &plus).displace(&mesh, e, xi);
            let b = DisplacementField::upstream(dt, &minus).displace(&mesh, e, xi);
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn linear_in_dt(u in -2.0f64..2.0, dt in 1e-4f64..0.05, xi in -1.0f64..1.0) {
            let mesh = build_mesh(8, 1.0, 3).unwrap();
            let vel = VelocityModel::Constant(u);
            let r1 = (DisplacementField::downstream(dt, &vel).displace(&mesh, 2, xi) - xi) / dt;
            let r2 = (DisplacementField::downstream(2.0 * dt, &vel).displace(&mesh, 2, xi) - xi) / (2.0 * dt);
            // subtracting ξ back out costs one rounding of the displaced value
            let rounding = 4.0 * f64::EPSILON * (xi.abs() + r1.abs() * dt + 1.0) / dt;
            prop_assert!((r1 - r2).abs() <= 1e-14 * r1.abs() + rounding);
        }
    }
}
