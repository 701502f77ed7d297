//! Global 1D advection operators.
//!
//! With `M` the edge mass matrix, `E` the incidence matrix, `M_U` the nodal
//! mass matrix and `R` the mixed velocity matrix, the flux-form operator is
//!
//! ```text
//! A = M E M_U⁻¹ R,          M q̇ + A q = 0
//! ```
//!
//! and the material-form operator is its negative transpose `B = −Aᵀ`.
//! The Petrov-Galerkin variants replace `M_U` and `R` by their counterparts
//! with downstream-displaced test functions; the downwinded material form is
//! `B_PG(Δt) = −A_PG(−Δt)ᵀ`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_incidence, incidence_matrix, mass_q, mass_u, mass_u_shifted, mixed_flux, VelocityModel,
};
use crate::departure::DisplacementField;
use crate::error::{Error, Result};
use crate::linalg::{DenseLu, LinearOperator};
use crate::mesh::{Field, PeriodicMesh1D, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    /// Flux form.
    A,
    /// Material form.
    B,
    /// Upwinded flux form.
    #[serde(rename = "A_PG")]
    APg,
    /// Downwinded material form.
    #[serde(rename = "B_PG")]
    BPg,
    /// Skew-symmetric `½(A − Aᵀ)`.
    S,
    /// Skew-symmetric `½(A_PG(Δt) − A_PG(−Δt)ᵀ)`.
    #[serde(rename = "S_PG")]
    SPg,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::A => "A",
            OperatorKind::B => "B",
            OperatorKind::APg => "A_PG",
            OperatorKind::BPg => "B_PG",
            OperatorKind::S => "S",
            OperatorKind::SPg => "S_PG",
        }
    }

    pub fn is_petrov_galerkin(self) -> bool {
        matches!(
            self,
            OperatorKind::APg | OperatorKind::BPg | OperatorKind::SPg
        )
    }

    pub fn all() -> [OperatorKind; 6] {
        [
            OperatorKind::A,
            OperatorKind::B,
            OperatorKind::APg,
            OperatorKind::BPg,
            OperatorKind::S,
            OperatorKind::SPg,
        ]
    }
}

impl std::str::FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(OperatorKind::A),
            "B" => Ok(OperatorKind::B),
            "A_PG" | "APG" | "A-PG" => Ok(OperatorKind::APg),
            "B_PG" | "BPG" | "B-PG" => Ok(OperatorKind::BPg),
            "S" => Ok(OperatorKind::S),
            "S_PG" | "SPG" | "S-PG" => Ok(OperatorKind::SPg),
            other => Err(Error::InvalidArgument(format!(
                "unknown operator kind `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An assembled advection operator acting on edge coefficients.
#[derive(Debug, Clone)]
pub struct AdvectionOperator {
    pub kind: OperatorKind,
    pub matrix: LinearOperator,
    /// Time step baked into the Petrov-Galerkin variants (0 otherwise).
    pub dt_used: f64,
}

impl AdvectionOperator {
    pub fn dense(&self) -> &DMatrix<f64> {
        self.matrix.as_dense()
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// `F = M_U⁻¹ R` (optionally with displaced test functions).
fn flux_map(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    shift: Option<&DisplacementField<'_>>,
) -> Result<DMatrix<f64>> {
    let r = mixed_flux(mesh, vel, shift).into_dense();
    let lu = match shift {
        None => mass_u(mesh).factorize("nodal mass matrix")?,
        Some(s) => shifted_mass_lu(mesh, s)?,
    };
    lu.solve_matrix(&r)
}

fn shifted_mass_lu(mesh: &PeriodicMesh1D, shift: &DisplacementField<'_>) -> Result<DenseLu> {
    let m = mass_u_shifted(mesh, shift).into_dense();
    DenseLu::new(m.clone(), "shifted nodal mass matrix").map_err(|err| match err {
        Error::Singular { context, .. } => {
            let condition = DenseLu::new(m.clone(), "")
                .map(|lu| lu.condition_estimate())
                .unwrap_or(f64::INFINITY);
            Error::Singular { context, condition }
        }
        other => other,
    })
}

/// `M E X` for a matrix `X` with rows indexed by nodal DOFs.
fn mass_times_incidence(mesh: &PeriodicMesh1D, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut ex = DMatrix::zeros(n, x.ncols());
    for j in 0..n {
        let next = (j + 1) % n;
        for c in 0..x.ncols() {
            ex[(j, c)] = x[(next, c)] - x[(j, c)];
        }
    }
    mass_q(mesh).as_dense() * ex
}

fn flux_form(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    shift: Option<&DisplacementField<'_>>,
) -> Result<DMatrix<f64>> {
    Ok(mass_times_incidence(mesh, &flux_map(mesh, vel, shift)?))
}

/// Flux-form operator `A = M E M_U⁻¹ R`.
pub fn build_a(mesh: &PeriodicMesh1D, vel: &VelocityModel) -> Result<AdvectionOperator> {
    Ok(AdvectionOperator {
        kind: OperatorKind::A,
        matrix: LinearOperator::dense(flux_form(mesh, vel, None)?),
        dt_used: 0.0,
    })
}

/// Upwinded flux-form operator with test functions displaced downstream by
/// `dt` (negative `dt` displaces upstream).
pub fn build_a_pg(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
) -> Result<AdvectionOperator> {
    build_a_pg_with_factor(mesh, vel, dt, 1.0)
}

pub fn build_a_pg_with_factor(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
    factor: f64,
) -> Result<AdvectionOperator> {
    let shift = DisplacementField::downstream(dt, vel).with_factor(factor);
    Ok(AdvectionOperator {
        kind: OperatorKind::APg,
        matrix: LinearOperator::dense(flux_form(mesh, vel, Some(&shift))?),
        dt_used: dt,
    })
}

/// Material-form operator `B = −⟨e, u l⟩ M_U⁻¹ Eᵀ M`, assembled directly.
pub fn build_b(mesh: &PeriodicMesh1D, vel: &VelocityModel) -> Result<AdvectionOperator> {
    let r = mixed_flux(mesh, vel, None).into_dense();
    let mu = mass_u(mesh).factorize("nodal mass matrix")?;
    let b = material_form(mesh, &r, &mu)?;
    Ok(AdvectionOperator {
        kind: OperatorKind::B,
        matrix: LinearOperator::dense(b),
        dt_used: 0.0,
    })
}

/// Downwinded material-form operator: trial functions of the gradient are
/// evaluated at upstream coordinates `ξ^u`.
pub fn build_b_pg(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
) -> Result<AdvectionOperator> {
    build_b_pg_with_factor(mesh, vel, dt, 1.0)
}

pub fn build_b_pg_with_factor(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
    factor: f64,
) -> Result<AdvectionOperator> {
    let shift = DisplacementField::upstream(dt, vel).with_factor(factor);
    // ⟨e_i, u l_k^d⟩ = R_upᵀ and ⟨l_m, l_k^d⟩ = M_upᵀ
    let r_up = mixed_flux(mesh, vel, Some(&shift)).into_dense();
    let m_up = mass_u_shifted(mesh, &shift).into_dense();
    let m_up_t = DenseLu::new(m_up.transpose(), "downwinded nodal mass matrix")?;
    let b = material_form(mesh, &r_up, &m_up_t)?;
    Ok(AdvectionOperator {
        kind: OperatorKind::BPg,
        matrix: LinearOperator::dense(b),
        dt_used: dt,
    })
}

/// `−Rᵀ · lu⁻¹ · Eᵀ M`
fn material_form(mesh: &PeriodicMesh1D, r: &DMatrix<f64>, lu: &DenseLu) -> Result<DMatrix<f64>> {
    let mq = mass_q(mesh).into_dense();
    let et_m = incidence_matrix(mesh.dim_q()).transpose() * mq;
    let x = lu.solve_matrix(&et_m)?;
    Ok(-(r.transpose() * x))
}

/// Skew-symmetric operator `½(A − Aᵀ)`.
pub fn build_s(mesh: &PeriodicMesh1D, vel: &VelocityModel) -> Result<AdvectionOperator> {
    let a = flux_form(mesh, vel, None)?;
    Ok(AdvectionOperator {
        kind: OperatorKind::S,
        matrix: LinearOperator::dense(skew_part(&a, &a)),
        dt_used: 0.0,
    })
}

/// Skew-symmetric Petrov-Galerkin operator `½(A_PG(Δt) + B_PG(Δt))`.
pub fn build_s_pg(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
) -> Result<AdvectionOperator> {
    build_s_pg_with_factor(mesh, vel, dt, 1.0)
}

pub fn build_s_pg_with_factor(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
    factor: f64,
) -> Result<AdvectionOperator> {
    let down = DisplacementField::downstream(dt, vel).with_factor(factor);
    let up = DisplacementField::upstream(dt, vel).with_factor(factor);
    let a_plus = flux_form(mesh, vel, Some(&down))?;
    let a_minus = flux_form(mesh, vel, Some(&up))?;
    Ok(AdvectionOperator {
        kind: OperatorKind::SPg,
        matrix: LinearOperator::dense(skew_part(&a_plus, &a_minus)),
        dt_used: dt,
    })
}

/// `½(X − Yᵀ)`, symmetrised exactly so the result is skew to the last bit.
fn skew_part(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let raw = 0.5 * (x - y.transpose());
    0.5 * (&raw - raw.transpose())
}

/// Builds any operator kind. `dt` is ignored by the non-PG kinds.
pub fn build_operator(
    kind: OperatorKind,
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    dt: f64,
    factor: f64,
) -> Result<AdvectionOperator> {
    match kind {
        OperatorKind::A => build_a(mesh, vel),
        OperatorKind::B => build_b(mesh, vel),
        OperatorKind::APg => build_a_pg_with_factor(mesh, vel, dt, factor),
        OperatorKind::BPg => build_b_pg_with_factor(mesh, vel, dt, factor),
        OperatorKind::S => build_s(mesh, vel),
        OperatorKind::SPg => build_s_pg_with_factor(mesh, vel, dt, factor),
    }
}

/// Solves for the flux `F = M_U⁻¹ R q` (or the Petrov-Galerkin flux when a
/// displacement is given).
pub fn solve_flux<'m>(
    mesh: &'m PeriodicMesh1D,
    vel: &VelocityModel,
    q: &Field<'_>,
    shift: Option<&DisplacementField<'_>>,
) -> Result<Field<'m>> {
    check_space(q, Space::Q)?;
    let rhs = mixed_flux(mesh, vel, shift).apply(q.coeffs());
    let lu = match shift {
        None => mass_u(mesh).factorize("nodal mass matrix")?,
        Some(s) => shifted_mass_lu(mesh, s)?,
    };
    Field::new(mesh, Space::U, lu.solve(&rhs)?)
}

/// Weak gradient `G = −M_U⁻¹ Eᵀ M q`.
pub fn solve_grad<'m>(mesh: &'m PeriodicMesh1D, q: &Field<'_>) -> Result<Field<'m>> {
    check_space(q, Space::Q)?;
    let mq = mesh.apply_mass_q(q.coeffs());
    let rhs: Vec<f64> = crate::assembly::apply_incidence_transpose(&mq)
        .into_iter()
        .map(|v| -v)
        .collect();
    let g = mass_u(mesh).factorize("nodal mass matrix")?.solve(&rhs)?;
    Field::new(mesh, Space::U, g)
}

/// Semi-discrete tendency `M⁻¹ K q` (so that `q̇ = −M⁻¹ K q`).
pub fn tendency(mesh: &PeriodicMesh1D, op: &AdvectionOperator, q: &[f64]) -> Result<Vec<f64>> {
    mesh.solve_mass_q(&op.matrix.apply(q))
}

/// Strong divergence `E F` of a nodal flux, as edge coefficients.
pub fn divergence(flux: &[f64]) -> Vec<f64> {
    apply_incidence(flux)
}

fn check_space(f: &Field<'_>, space: Space) -> Result<()> {
    if f.space() != space {
        return Err(Error::InvalidArgument(format!(
            "expected a field in {space:?}, got {:?}",
            f.space()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use crate::mesh::{build_mesh, project_to_q};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn manufactured() -> VelocityModel {
        VelocityModel::analytic(|x| 0.4 + 0.2 * (1.0 + (2.0 * PI * x).sin()))
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn zero_velocity_operators_vanish() {
        let mesh = build_mesh(5, 1.0, 3).unwrap();
        let u = VelocityModel::Constant(0.0);
        assert_eq!(max_abs(build_a(&mesh, &u).unwrap().dense()), 0.0);
        assert_eq!(max_abs(build_b(&mesh, &u).unwrap().dense()), 0.0);
    }

    #[test]
    fn constant_tracer_in_constant_flow_is_steady() {
        let mesh = build_mesh(6, 1.0, 4).unwrap();
        let u = VelocityModel::Constant(0.4);
        let a = build_a(&mesh, &u).unwrap();
        let q = project_to_q(&mesh, |_| 1.3).unwrap();
        let aq = a.matrix.apply(q.coeffs());
        assert!(aq.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn flux_form_conserves_mass() {
        let mesh = build_mesh(8, 1.0, 3).unwrap();
        let u = manufactured();
        for op in [
            build_a(&mesh, &u).unwrap(),
            build_a_pg(&mesh, &u, 0.01).unwrap(),
        ] {
            for seed in 0..100 {
                let q = pseudo_random(mesh.dim_q(), seed);
                let t = tendency(&mesh, &op, &q).unwrap();
                let scale: f64 = t.iter().map(|v| v.abs()).sum();
                assert!(t.iter().sum::<f64>().abs() <= 1e-11 * scale.max(1.0));
            }
        }
    }

    #[test]
    fn b_is_negative_a_transpose() {
        let mesh = build_mesh(7, 1.0, 4).unwrap();
        let u = manufactured();
        let a = build_a(&mesh, &u).unwrap();
        let b = build_b(&mesh, &u).unwrap();
        let diff = b.dense() + a.dense().transpose();
        assert!(
            max_abs(&diff) <= 1e-12 * max_abs(a.dense()).max(1.0),
            "{}",
            max_abs(&diff)
        );
    }

    #[test]
    fn b_pg_is_negative_a_pg_reversed_transpose() {
        let mesh = build_mesh(7, 1.0, 3).unwrap();
        let u = manufactured();
        let dt = 0.01;
        let b = build_b_pg(&mesh, &u, dt).unwrap();
        let a = build_a_pg(&mesh, &u, -dt).unwrap();
        let diff = b.dense() + a.dense().transpose();
        assert!(max_abs(&diff) <= 1e-12 * max_abs(a.dense()).max(1.0));
    }

    #[test]
    fn a_pg_with_zero_dt_is_a() {
        let mesh = build_mesh(9, 1.0, 5).unwrap();
        let u = manufactured();
        let a = build_a(&mesh, &u).unwrap();
        let a0 = build_a_pg(&mesh, &u, 0.0).unwrap();
        let d = max_abs(&(a.dense() - a0.dense()));
        // the shifted mass matrix is assembled point by point, the plain one
        // from the element block, so only rounding separates them
        assert!(d <= 1e-14 * max_abs(a.dense()), "{d}");
    }

    #[test]
    fn skew_operators() {
        let mesh = build_mesh(6, 1.0, 3).unwrap();
        let u = VelocityModel::Constant(0.4);
        for op in [
            build_s(&mesh, &u).unwrap(),
            build_s_pg(&mesh, &u, 0.005).unwrap(),
        ] {
            let s = op.dense();
            assert_eq!(max_abs(&(s + s.transpose())), 0.0);
            for seed in 0..100 {
                let q = nalgebra::DVector::from_vec(pseudo_random(mesh.dim_q(), seed));
                let form = q.dot(&(s * &q));
                assert!(form.abs() <= 1e-12 * max_abs(s));
            }
        }
    }

    #[test]
    fn flux_and_gradient_of_constants() {
        let mesh = build_mesh(5, 1.0, 3).unwrap();
        let c = 0.6;
        let one = project_to_q(&mesh, |_| 1.0).unwrap();
        let f = solve_flux(&mesh, &VelocityModel::Constant(c), &one, None).unwrap();
        for v in f.coeffs() {
            assert_abs_diff_eq!(*v, c, epsilon = 1e-12);
        }
        let g = solve_grad(&mesh, &project_to_q(&mesh, |_| 2.0).unwrap()).unwrap();
        assert!(g.coeffs().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn gradient_of_smooth_profile() {
        let mesh = build_mesh(16, 1.0, 4).unwrap();
        let q = project_to_q(&mesh, |x| (2.0 * PI * x).sin()).unwrap();
        let g = solve_grad(&mesh, &q).unwrap();
        let err = g.l2_error(|x| 2.0 * PI * (2.0 * PI * x).cos(), 2);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn wrong_space_is_rejected() {
        let mesh = build_mesh(4, 1.0, 2).unwrap();
        let u = Field::zeros(&mesh, Space::U);
        assert!(solve_grad(&mesh, &u).is_err());
    }

    #[test]
    fn kind_parsing() {
        for k in OperatorKind::all() {
            assert_eq!(k.name().parse::<OperatorKind>().unwrap(), k);
        }
        assert!("C".parse::<OperatorKind>().is_err());
    }
}
