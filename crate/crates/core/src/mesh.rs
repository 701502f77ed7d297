//! Uniform periodic 1D mesh, degree-of-freedom numbering, fields and
//! scalar diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::polybasis::{gauss_rule, EdgeProjector, NodalEdgeBasis, QuadratureRule};

/// Function space a coefficient vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Nodal flux space, continuous across elements.
    U,
    /// Edge tracer space, discontinuous.
    Q,
}

/// Uniform partition of `[0, L)` into `n_e` elements of degree `p`.
#[derive(Debug, Clone)]
pub struct PeriodicMesh1D {
    n_elements: usize,
    length: f64,
    basis: NodalEdgeBasis,
    quadrature: QuadratureRule,
}

impl PeriodicMesh1D {
    /// Mesh with the default assembly quadrature of `p + 3` Gauss points.
    pub fn new(n_elements: usize, length: f64, p: usize) -> Result<Self> {
        Self::with_quadrature(n_elements, length, p, p + 3)
    }

    pub fn with_quadrature(n_elements: usize, length: f64, p: usize, q: usize) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 elements, got {n_elements}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidMesh(format!(
                "domain length {length} must be positive"
            )));
        }
        let basis = NodalEdgeBasis::new(p)?;
        let quadrature = gauss_rule(q)?;
        Ok(Self {
            n_elements,
            length,
            basis,
            quadrature,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn basis(&self) -> &NodalEdgeBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn element_width(&self) -> f64 {
        self.length / self.n_elements as f64
    }

    /// Jacobian determinant `|J| = L / (2 n_e)`.
    pub fn jacobian(&self) -> f64 {
        0.5 * self.element_width()
    }

    pub fn dim_u(&self) -> usize {
        self.n_elements * self.degree()
    }

    pub fn dim_q(&self) -> usize {
        self.n_elements * self.degree()
    }

    pub fn dim(&self, space: Space) -> usize {
        match space {
            Space::U => self.dim_u(),
            Space::Q => self.dim_q(),
        }
    }

    /// Global nodal index of local node `i` (0..=p) of element `e`.
    pub fn node_dof(&self, e: usize, i: usize) -> usize {
        (e * self.degree() + i) % self.dim_u()
    }

    /// Global edge index of local edge `j` (0..p) of element `e`.
    pub fn edge_dof(&self, e: usize, j: usize) -> usize {
        e * self.degree() + j
    }

    /// Physical coordinate of local coordinate `ξ` in element `e`.
    pub fn x_of(&self, e: usize, xi: f64) -> f64 {
        let h = self.element_width();
        e as f64 * h + 0.5 * (xi + 1.0) * h
    }

    /// Element and local coordinate containing physical point `x`
    /// (wrapped periodically into `[0, L)`).
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let xw = x.rem_euclid(self.length);
        let h = self.element_width();
        let e = ((xw / h).floor() as usize).min(self.n_elements - 1);
        let xi = 2.0 * (xw - e as f64 * h) / h - 1.0;
        (e, xi.clamp(-1.0, 1.0))
    }

    /// Physical positions of the global nodal DOFs.
    pub fn node_positions(&self) -> Vec<f64> {
        let mut xs = vec![0.0; self.dim_u()];
        for e in 0..self.n_elements {
            for (i, &xi) in self.basis.nodes().iter().enumerate().take(self.degree()) {
                xs[self.node_dof(e, i)] = self.x_of(e, xi);
            }
        }
        xs
    }

    /// Element-local edge mass matrix `∫ e_i e_j / |J| dξ`.
    pub fn local_mass_q(&self) -> DMatrix<f64> {
        self.basis.edge_mass(&self.quadrature) / self.jacobian()
    }

    /// Element-local nodal mass matrix `∫ l_i l_j |J| dξ`.
    pub fn local_mass_u(&self) -> DMatrix<f64> {
        let n = self.degree() + 1;
        let jac = self.jacobian();
        let mut m = DMatrix::zeros(n, n);
        let mut lv = vec![0.0; n];
        for (&xi, &w) in self.quadrature.points.iter().zip(&self.quadrature.weights) {
            self.basis.nodal_values(xi, &mut lv);
            for i in 0..n {
                for j in i..n {
                    m[(i, j)] += w * lv[i] * lv[j] * jac;
                }
            }
        }
        m.fill_lower_triangle_with_upper_triangle();
        m
    }

    /// Cell-by-cell solve with the block-diagonal edge mass matrix.
    pub fn solve_mass_q(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim_q() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_q(),
                found: rhs.len(),
            });
        }
        let p = self.degree();
        let chol = self
            .local_mass_q()
            .cholesky()
            .ok_or_else(|| Error::Singular {
                context: "edge mass matrix".into(),
                condition: f64::INFINITY,
            })?;
        let mut out = vec![0.0; rhs.len()];
        for e in 0..self.n_elements {
            let b = DVector::from_column_slice(&rhs[e * p..(e + 1) * p]);
            let x = chol.solve(&b);
            out[e * p..(e + 1) * p].copy_from_slice(x.as_slice());
        }
        Ok(out)
    }

    /// `M_Q x` using the element blocks.
    pub fn apply_mass_q(&self, x: &[f64]) -> Vec<f64> {
        let p = self.degree();
        let m = self.local_mass_q();
        let mut out = vec![0.0; x.len()];
        for e in 0..self.n_elements {
            let xe = DVector::from_column_slice(&x[e * p..(e + 1) * p]);
            let y = &m * xe;
            out[e * p..(e + 1) * p].copy_from_slice(y.as_slice());
        }
        out
    }
}

/// Convenience constructor mirroring [`PeriodicMesh1D::new`].
pub fn build_mesh(n_elements: usize, length: f64, p: usize) -> Result<PeriodicMesh1D> {
    PeriodicMesh1D::new(n_elements, length, p)
}

/// Coefficient vector tagged with its space and mesh.
#[derive(Debug, Clone)]
pub struct Field<'m> {
    mesh: &'m PeriodicMesh1D,
    space: Space,
    coeffs: Vec<f64>,
}

/// Scalar diagnostics of an edge-space field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub mass: f64,
    pub energy: f64,
    pub total_variation: f64,
}

impl<'m> Field<'m> {
    pub fn new(mesh: &'m PeriodicMesh1D, space: Space, coeffs: Vec<f64>) -> Result<Self> {
        let expected = mesh.dim(space);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: coeffs.len(),
            });
        }
        Ok(Self {
            mesh,
            space,
            coeffs,
        })
    }

    pub fn zeros(mesh: &'m PeriodicMesh1D, space: Space) -> Self {
        Self {
            mesh,
            space,
            coeffs: vec![0.0; mesh.dim(space)],
        }
    }

    /// Nodal interpolant of `f` in the flux space.
    pub fn interpolate_u(mesh: &'m PeriodicMesh1D, f: impl Fn(f64) -> f64) -> Self {
        let coeffs = mesh.node_positions().into_iter().map(f).collect();
        Self {
            mesh,
            space: Space::U,
            coeffs,
        }
    }

    pub fn mesh(&self) -> &'m PeriodicMesh1D {
        self.mesh
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Value at local coordinate `ξ` of element `e`.
    pub fn eval_local(&self, e: usize, xi: f64) -> f64 {
        let basis = self.mesh.basis();
        let p = basis.degree();
        match self.space {
            Space::U => {
                let mut lv = vec![0.0; p + 1];
                basis.nodal_values(xi, &mut lv);
                lv.iter()
                    .enumerate()
                    .map(|(i, l)| l * self.coeffs[self.mesh.node_dof(e, i)])
                    .sum()
            }
            Space::Q => {
                let mut ev = vec![0.0; p];
                basis.edge_values(xi, &mut ev);
                let s: f64 = ev
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * self.coeffs[self.mesh.edge_dof(e, j)])
                    .sum();
                s / self.mesh.jacobian()
            }
        }
    }

    /// Point values at physical positions.
    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let (e, xi) = self.mesh.locate(x);
                self.eval_local(e, xi)
            })
            .collect()
    }

    /// `‖f_h − f‖_{L²}` with the mesh quadrature raised by `extra` points.
    pub fn l2_error(&self, f: impl Fn(f64) -> f64, extra: usize) -> f64 {
        let rule = gauss_rule(self.mesh.quadrature().len() + extra).expect("valid rule");
        let jac = self.mesh.jacobian();
        let mut acc = 0.0;
        for e in 0..self.mesh.n_elements() {
            for (&xi, &w) in rule.points.iter().zip(&rule.weights) {
                let d = self.eval_local(e, xi) - f(self.mesh.x_of(e, xi));
                acc += w * jac * d * d;
            }
        }
        acc.sqrt()
    }

    /// `‖f_h‖_{L²}`
    pub fn l2_norm(&self) -> f64 {
        self.l2_error(|_| 0.0, 0)
    }

    /// Mass, energy and total variation of an edge-space field.
    pub fn diagnostics(&self) -> Diagnostics {
        debug_assert_eq!(self.space, Space::Q);
        diagnostics(self.mesh, &self.coeffs)
    }

    /// Writes `x,value` rows for the given sample positions.
    pub fn write_samples_csv<W: Write>(&self, mut w: W, xs: &[f64]) -> std::io::Result<()> {
        writeln!(w, "x,value")?;
        for (x, v) in xs.iter().zip(self.sample(xs)) {
            writeln!(w, "{x:.17e},{v:.17e}")?;
        }
        Ok(())
    }

    /// Writes `dof_index,coeff` rows.
    pub fn write_dofs_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "dof_index,coeff")?;
        for (i, c) in self.coeffs.iter().enumerate() {
            writeln!(w, "{i},{c:.17e}")?;
        }
        Ok(())
    }
}

/// `n` uniformly spaced cell-centred sample points on `[0, L)`.
pub fn uniform_points(length: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| (j as f64 + 0.5) * length / n as f64)
        .collect()
}

/// Diagnostics from raw edge coefficients.
///
/// Total variation is measured periodically on `8 n_e p` uniform samples.
pub fn diagnostics(mesh: &PeriodicMesh1D, coeffs: &[f64]) -> Diagnostics {
    let mass = coeffs.iter().sum();
    let mq = mesh.apply_mass_q(coeffs);
    let energy = coeffs.iter().zip(&mq).map(|(a, b)| a * b).sum();
    let field = Field {
        mesh,
        space: Space::Q,
        coeffs: coeffs.to_vec(),
    };
    let xs = uniform_points(mesh.length(), 8 * mesh.dim_q());
    let vals = field.sample(&xs);
    Diagnostics {
        mass,
        energy,
        total_variation: total_variation(&vals),
    }
}

/// Periodic total variation of a sequence of samples.
pub fn total_variation(vals: &[f64]) -> f64 {
    let n = vals.len();
    (0..n).map(|i| (vals[(i + 1) % n] - vals[i]).abs()).sum()
}

/// L² projection of `f` onto the edge space.
pub fn project_to_q<'m>(mesh: &'m PeriodicMesh1D, f: impl Fn(f64) -> f64) -> Result<Field<'m>> {
    project_to_q_with(mesh, mesh.quadrature(), f)
}

/// L² projection of `f` onto the edge space using a given element rule.
pub fn project_to_q_with<'m>(
    mesh: &'m PeriodicMesh1D,
    rule: &QuadratureRule,
    f: impl Fn(f64) -> f64,
) -> Result<Field<'m>> {
    let p = mesh.degree();
    let projector = EdgeProjector::new(mesh.basis(), rule);
    let mut coeffs = vec![0.0; mesh.dim_q()];
    let mut fx = vec![0.0; rule.len()];
    for e in 0..mesh.n_elements() {
        for (v, &xi) in fx.iter_mut().zip(&rule.points) {
            *v = f(mesh.x_of(e, xi));
        }
        // e_i / |J| against f over |J| dξ, then the |J|-scaled inverse mass
        projector.project(&fx, mesh.jacobian(), &mut coeffs[e * p..(e + 1) * p]);
    }
    Field::new(mesh, Space::Q, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn mesh_dimensions() {
        let m = build_mesh(4, 1.0, 3).unwrap();
        assert_eq!(m.dim_u(), 12);
        assert_eq!(m.dim_q(), 12);
        assert_abs_diff_eq!(m.jacobian(), 0.125, epsilon = 1e-15);
        let m = build_mesh(2, 1.0, 1).unwrap();
        assert_eq!((m.dim_u(), m.dim_q()), (2, 2));
        assert_eq!(build_mesh(20, 1.0, 5).unwrap().dim_q(), 100);
    }

    #[test]
    fn invalid_meshes() {
        assert!(build_mesh(1, 1.0, 3).is_err());
        assert!(build_mesh(4, 0.0, 3).is_err());
        assert!(build_mesh(4, -1.0, 3).is_err());
        assert!(build_mesh(4, 1.0, 0).is_err());
    }

    #[test]
    fn dof_maps_are_bijective() {
        for (ne, p) in [(2, 1), (3, 2), (5, 4), (7, 6)] {
            let m = build_mesh(ne, 1.0, p).unwrap();
            let mut node_hits = vec![0; m.dim_u()];
            let mut edge_hits = vec![0; m.dim_q()];
            for e in 0..ne {
                for i in 0..=p {
                    node_hits[m.node_dof(e, i)] += 1;
                }
                for j in 0..p {
                    edge_hits[m.edge_dof(e, j)] += 1;
                }
                assert_eq!(m.node_dof(e, p), m.node_dof((e + 1) % ne, 0));
            }
            for (g, &h) in node_hits.iter().enumerate() {
                let expected = if g % p == 0 { 2 } else { 1 };
                assert_eq!(h, expected);
            }
            assert!(edge_hits.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn local_mass_single_linear_element() {
        // p = 1 edge function is 1/2; scaled by 2/Δx the block is 1/Δx
        let dx = 0.3;
        let m = build_mesh(2, 2.0 * dx, 1).unwrap();
        assert_abs_diff_eq!(m.local_mass_q()[(0, 0)], 1.0 / dx, epsilon = 1e-13);
    }

    #[test]
    fn projection_of_constant() {
        let m = build_mesh(6, 1.0, 4).unwrap();
        let q = project_to_q(&m, |_| 2.5).unwrap();
        let xs = uniform_points(1.0, 97);
        for v in q.sample(&xs) {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(q.diagnostics().mass, 2.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_of_smooth_profile() {
        // the edge space holds degree p-1 polynomials, so the sampled maximum
        // error decays like h^p: 3.0e-5 at n_e = 32, p = 3
        let f = |x: f64| 0.5 * (1.0 - (2.0 * PI * x).cos());
        let xs = uniform_points(1.0, 1000);
        let max_err = |ne: usize, p: usize| {
            let m = build_mesh(ne, 1.0, p).unwrap();
            let q = project_to_q(&m, f).unwrap();
            q.sample(&xs)
                .iter()
                .zip(&xs)
                .map(|(v, &x)| (v - f(x)).abs())
                .fold(0.0, f64::max)
        };
        let e32 = max_err(32, 3);
        assert!(e32 < 3.1e-5, "max error {e32}");
        let e64 = max_err(64, 3);
        assert!((e32 / e64).log2() > 2.8);
        assert!(max_err(32, 5) < 1e-6);
    }

    #[test]
    fn projection_of_steep_front_oscillates() {
        let m = build_mesh(20, 1.0, 5).unwrap();
        let q = project_to_q(&m, crate::experiments::tanh_profile).unwrap();
        let vals = q.sample(&uniform_points(1.0, 2000));
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min < -1e-3 || max > 1.0 + 1e-3, "min {min} max {max}");
    }

    #[test]
    fn sampling_examples() {
        let m = build_mesh(4, 1.0, 3).unwrap();
        let zero = Field::zeros(&m, Space::Q);
        assert!(zero.sample(&[0.1, 0.5, 0.99]).iter().all(|&v| v == 0.0));

        let u = Field::interpolate_u(&m, |x| x);
        let xs = [0.01, 0.1, 0.2, 0.24];
        for (v, x) in u.sample(&xs).iter().zip(xs) {
            assert_abs_diff_eq!(*v, x, epsilon = 1e-12);
        }

        let dx = 0.5;
        let m1 = build_mesh(2, 1.0, 1).unwrap();
        let q = Field::new(&m1, Space::Q, vec![dx, dx]).unwrap();
        for v in q.sample(&[0.05, 0.3, 0.7]) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn diagnostics_examples() {
        let m = build_mesh(5, 1.0, 3).unwrap();
        let d = Field::zeros(&m, Space::Q).diagnostics();
        assert_eq!((d.mass, d.energy, d.total_variation), (0.0, 0.0, 0.0));
        let c = project_to_q(&m, |_| 0.7).unwrap();
        assert_abs_diff_eq!(c.diagnostics().mass, 0.7, epsilon = 1e-13);
        assert!(c.diagnostics().total_variation < 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = build_mesh(3, 1.0, 2).unwrap();
        assert!(Field::new(&m, Space::U, vec![0.0; 5]).is_err());
    }

    #[test]
    fn csv_outputs() {
        let m = build_mesh(2, 1.0, 1).unwrap();
        let q = Field::new(&m, Space::Q, vec![0.5, 0.5]).unwrap();
        let mut buf = Vec::new();
        q.write_dofs_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("dof_index,coeff\n0,"));
        let mut buf = Vec::new();
        q.write_samples_csv(&mut buf, &[0.25]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,value\n"));
    }
}
