//! Global 1D matrices: incidence, mass matrices and the velocity-weighted
//! mixed matrices, with optional displaced test functions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::departure::DisplacementField;
use crate::linalg::LinearOperator;
use crate::mesh::PeriodicMesh1D;

/// A velocity field on the periodic line.
#[derive(Clone)]
pub enum VelocityModel {
    Constant(f64),
    Analytic(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Nodal coefficients in the flux space of the mesh it is evaluated on.
    Discrete(Vec<f64>),
}

impl fmt::Debug for VelocityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VelocityModel::Constant(c) => write!(f, "Constant({c})"),
            VelocityModel::Analytic(_) => write!(f, "Analytic(..)"),
            VelocityModel::Discrete(v) => write!(f, "Discrete(len = {})", v.len()),
        }
    }
}

impl VelocityModel {
    pub fn analytic(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        VelocityModel::Analytic(Arc::new(f))
    }

    /// Velocity at local coordinate `ξ` of element `e`.
    pub fn eval(&self, mesh: &PeriodicMesh1D, e: usize, xi: f64) -> f64 {
        match self {
            VelocityModel::Constant(c) => *c,
            VelocityModel::Analytic(f) => f(mesh.x_of(e, xi)),
            VelocityModel::Discrete(coeffs) => {
                let p = mesh.degree();
                let mut lv = vec![0.0; p + 1];
                mesh.basis().nodal_values(xi, &mut lv);
                lv.iter()
                    .enumerate()
                    .map(|(i, l)| l * coeffs[mesh.node_dof(e, i)])
                    .sum()
            }
        }
    }

    /// Velocity at a physical point.
    pub fn eval_at(&self, mesh: &PeriodicMesh1D, x: f64) -> f64 {
        let (e, xi) = mesh.locate(x);
        self.eval(mesh, e, xi)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, VelocityModel::Constant(_))
    }
}

/// Incidence matrix `E`: row `j` has `−1` at node `j` and `+1` at node
/// `j + 1 (mod n)`.
pub fn incidence(mesh: &PeriodicMesh1D) -> LinearOperator {
    LinearOperator::dense(incidence_matrix(mesh.dim_q()))
}

pub fn incidence_matrix(n: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n, n);
    for j in 0..n {
        e[(j, j)] -= 1.0;
        e[(j, (j + 1) % n)] += 1.0;
    }
    e
}

/// `E x` without forming the matrix.
pub fn apply_incidence(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|j| x[(j + 1) % n] - x[j]).collect()
}

/// `Eᵀ x` without forming the matrix.
pub fn apply_incidence_transpose(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n).map(|i| x[(i + n - 1) % n] - x[i]).collect()
}

/// Galerkin nodal mass matrix `⟨l_i, l_j⟩`.
pub fn mass_u(mesh: &PeriodicMesh1D) -> LinearOperator {
    let local = mesh.local_mass_u();
    let n = mesh.dim_u();
    let p = mesh.degree();
    let mut m = DMatrix::zeros(n, n);
    for e in 0..mesh.n_elements() {
        for i in 0..=p {
            for j in 0..=p {
                m[(mesh.node_dof(e, i), mesh.node_dof(e, j))] += local[(i, j)];
            }
        }
    }
    LinearOperator::dense(m)
}

/// Galerkin edge mass matrix `⟨e_i, e_j⟩` (block diagonal).
pub fn mass_q(mesh: &PeriodicMesh1D) -> LinearOperator {
    let local = mesh.local_mass_q();
    let n = mesh.dim_q();
    let p = mesh.degree();
    let mut m = DMatrix::zeros(n, n);
    for e in 0..mesh.n_elements() {
        for i in 0..p {
            for j in 0..p {
                m[(mesh.edge_dof(e, i), mesh.edge_dof(e, j))] = local[(i, j)];
            }
        }
    }
    LinearOperator::dense(m)
}

/// Mixed matrix `R_ik = ⟨l_i^u u, e_k⟩` with the test functions evaluated at
/// the displaced images of the quadrature points (`shift = None` gives the
/// plain Galerkin matrix).
pub fn mixed_flux(
    mesh: &PeriodicMesh1D,
    vel: &VelocityModel,
    shift: Option<&DisplacementField<'_>>,
) -> LinearOperator {
    let p = mesh.degree();
    let basis = mesh.basis();
    let quad = mesh.quadrature();
    let mut r = DMatrix::zeros(mesh.dim_u(), mesh.dim_q());
    let mut lv = vec![0.0; p + 1];
    let mut ev = vec![0.0; p];
    for e in 0..mesh.n_elements() {
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            let u = vel.eval(mesh, e, xi);
            let xi_test = shift.map_or(xi, |s| s.displace(mesh, e, xi));
            basis.nodal_values(xi_test, &mut lv);
            basis.edge_values(xi, &mut ev);
            // |J| from the measure cancels the 1/|J| of the edge function
            for i in 0..=p {
                let gi = mesh.node_dof(e, i);
                let a = w * lv[i] * u;
                for k in 0..p {
                    r[(gi, mesh.edge_dof(e, k))] += a * ev[k];
                }
            }
        }
    }
    LinearOperator::dense(r)
}

/// Petrov-Galerkin nodal mass matrix `⟨l_i^u, l_j⟩` with displaced test
/// functions and unshifted trial functions.
pub fn mass_u_shifted(mesh: &PeriodicMesh1D, shift: &DisplacementField<'_>) -> LinearOperator {
    let p = mesh.degree();
    let basis = mesh.basis();
    let quad = mesh.quadrature();
    let jac = mesh.jacobian();
    let n = mesh.dim_u();
    let mut m = DMatrix::zeros(n, n);
    let mut test = vec![0.0; p + 1];
    let mut trial = vec![0.0; p + 1];
    for e in 0..mesh.n_elements() {
        for (&xi, &w) in quad.points.iter().zip(&quad.weights) {
            basis.nodal_values(shift.displace(mesh, e, xi), &mut test);
            basis.nodal_values(xi, &mut trial);
            for i in 0..=p {
                let gi = mesh.node_dof(e, i);
                for j in 0..=p {
                    m[(gi, mesh.node_dof(e, j))] += w * jac * test[i] * trial[j];
                }
            }
        }
    }
    LinearOperator::dense(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, DenseLu};
    use crate::mesh::{build_mesh, project_to_q, PeriodicMesh1D};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn manufactured_velocity() -> VelocityModel {
        VelocityModel::analytic(|x| 0.4 + 0.2 * (1.0 + (2.0 * PI * x).sin()))
    }

    #[test]
    fn incidence_reference_matrix() {
        let e = incidence_matrix(4);
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, 0.0, -1.0,
            ],
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn incidence_telescopes() {
        for n in [2, 3, 12, 40] {
            let e = incidence_matrix(n);
            for j in 0..n {
                assert_eq!(e.column(j).sum(), 0.0);
                assert_eq!(e.row(j).sum(), 0.0);
                assert_eq!(e.row(j).iter().filter(|v| **v != 0.0).count(), 2);
            }
            let ones = vec![1.0; n];
            assert!(apply_incidence(&ones).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn incidence_matrix_free_matches_dense() {
        let e = incidence_matrix(7);
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 1.3).sin()).collect();
        let op = LinearOperator::dense(e);
        assert_eq!(op.apply(&x), apply_incidence(&x));
        assert_eq!(op.apply_transpose(&x), apply_incidence_transpose(&x));
    }

    #[test]
    fn mass_matrices_spd() {
        for (ne, p) in [(2, 1), (4, 3), (6, 6)] {
            let mesh = build_mesh(ne, 1.0, p).unwrap();
            for m in [mass_u(&mesh), mass_q(&mesh)] {
                let d = m.to_dense();
                assert_eq!(max_abs(&(&d - d.transpose())), 0.0);
                assert!(d.clone().cholesky().is_some());
                let eig = d.symmetric_eigenvalues();
                assert!(eig.min() > 0.0);
            }
        }
    }

    #[test]
    fn mass_u_row_sums() {
        let mesh = build_mesh(2, 1.0, 1).unwrap();
        let m = mass_u(&mesh).to_dense();
        for i in 0..2 {
            assert_abs_diff_eq!(m.row(i).sum(), 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_velocity_gives_zero_mixed_matrix() {
        let mesh = build_mesh(5, 1.0, 3).unwrap();
        let r = mixed_flux(&mesh, &VelocityModel::Constant(0.0), None);
        assert_eq!(max_abs(r.as_dense()), 0.0);
    }

    #[test]
    fn constant_flux_reproduced() {
        let mesh = build_mesh(6, 1.0, 4).unwrap();
        let c = 0.7;
        let q = project_to_q(&mesh, |_| 1.0).unwrap();
        let r = mixed_flux(&mesh, &VelocityModel::Constant(c), None);
        let rhs = r.apply(q.coeffs());
        let f = mass_u(&mesh).factorize("M_U").unwrap().solve(&rhs).unwrap();
        for v in f {
            assert_abs_diff_eq!(v, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_shift_matches_unshifted() {
        let mesh = build_mesh(5, 1.0, 4).unwrap();
        let vel = manufactured_velocity();
        let shift = DisplacementField::downstream(0.0, &vel);
        let a = mixed_flux(&mesh, &vel, None).into_dense();
        let b = mixed_flux(&mesh, &vel, Some(&shift)).into_dense();
        assert!(max_abs(&(a - b)) <= 1e-14);
        let m = mass_u(&mesh).into_dense();
        let ms = mass_u_shifted(&mesh, &shift).into_dense();
        assert!(max_abs(&(m - ms)) <= 1e-14);
    }

    #[test]
    fn shifted_mass_is_first_order_in_shift() {
        let mesh = build_mesh(6, 1.0, 4).unwrap();
        let vel = VelocityModel::Constant(1.0);
        let m = mass_u(&mesh).into_dense();
        // shift δ in local units: dt = δ |J| / u
        let jac = mesh.jacobian();
        let diff = |delta: f64| {
            let s = DisplacementField::downstream(delta * jac, &vel);
            max_abs(&(mass_u_shifted(&mesh, &s).into_dense() - &m))
        };
        let d3 = diff(1e-3);
        let d4 = diff(1e-4);
        let ratio = d3 / d4;
        assert!((ratio - 10.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn shifted_mass_condition_grows_with_shift() {
        let mesh = build_mesh(6, 1.0, 6).unwrap();
        let vel = VelocityModel::Constant(1.0);
        let jac = mesh.jacobian();
        let conds: Vec<f64> = [0.0, 0.125, 0.25, 0.375, 0.5]
            .iter()
            .map(|&delta| {
                let s = DisplacementField::downstream(delta * jac, &vel);
                DenseLu::new(mass_u_shifted(&mesh, &s).into_dense(), "shifted")
                    .unwrap()
                    .condition_estimate()
            })
            .collect();
        for w in conds.windows(2) {
            assert!(w[1] > w[0], "{conds:?}");
        }
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let vel = manufactured_velocity();
        for p in [3, 6] {
            let coarse = PeriodicMesh1D::with_quadrature(16, 1.0, p, p + 3).unwrap();
            let fine = PeriodicMesh1D::with_quadrature(16, 1.0, p, 2 * (p + 3)).unwrap();
            let a = mixed_flux(&coarse, &vel, None).into_dense();
            let b = mixed_flux(&fine, &vel, None).into_dense();
            let scale = max_abs(&b);
            for (x, y) in a.iter().zip(b.iter()) {
                if y.abs() > 1e-8 * scale {
                    assert!(
                        (x - y).abs() <= 1e-9 * y.abs().max(1e-3 * scale),
                        "p={p}: {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn discrete_velocity_matches_analytic() {
        let f = |x: f64| 0.4 + 0.2 * (1.0 + (2.0 * PI * x).sin());
        let mut prev = f64::INFINITY;
        for ne in [4, 8, 16] {
            let mesh = build_mesh(ne, 1.0, 3).unwrap();
            let nodal = crate::mesh::Field::interpolate_u(&mesh, f).into_coeffs();
            let a = mixed_flux(&mesh, &VelocityModel::analytic(f), None).into_dense();
            let b = mixed_flux(&mesh, &VelocityModel::Discrete(nodal), None).into_dense();
            let err = max_abs(&(a - b));
            assert!(err < prev / 8.0, "ne={ne}: {err} vs {prev}");
            prev = err;
        }
    }
}
