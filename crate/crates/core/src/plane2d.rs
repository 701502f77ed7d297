//! Doubly periodic plane: tensor-product flux (β) and tracer (γ) bases, the
//! 2D incidence matrix, upwinded flux-form advection and RK3 test runs.
//!
//! Global numbering with `N = n_e p` lines per direction:
//! tracer cell `(gx, gy)` is `gy N + gx`; the ξ-directed flux through the
//! x-face at node line `gx` in row `gy` is `gy N + gx`; the η-directed flux
//! through the y-face at node line `gy` in column `gx` is `N² + gy N + gx`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bicgstab, conjugate_gradient, csr_apply, IterativeConfig, LinearOperator};
use crate::polybasis::{gauss_rule, NodalEdgeBasis, QuadratureRule};
use crate::timestep::step_rk3;

/// Uniform `n_e × n_e` partition of `[0, L_x) × [0, L_y)`.
#[derive(Debug, Clone)]
pub struct PeriodicMesh2D {
    n_elements: usize,
    lx: f64,
    ly: f64,
    basis: NodalEdgeBasis,
    quadrature: QuadratureRule,
}

impl PeriodicMesh2D {
    pub fn new(n_elements: usize, lx: f64, ly: f64, p: usize) -> Result<Self> {
        Self::with_quadrature(n_elements, lx, ly, p, p + 3)
    }

    pub fn with_quadrature(
        n_elements: usize,
        lx: f64,
        ly: f64,
        p: usize,
        q: usize,
    ) -> Result<Self> {
        if n_elements < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 elements per direction, got {n_elements}"
            )));
        }
        for l in [lx, ly] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "domain length {l} must be positive"
                )));
            }
        }
        Ok(Self {
            n_elements,
            lx,
            ly,
            basis: NodalEdgeBasis::new(p)?,
            quadrature: gauss_rule(q)?,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn lengths(&self) -> (f64, f64) {
        (self.lx, self.ly)
    }

    pub fn basis(&self) -> &NodalEdgeBasis {
        &self.basis
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// DOF lines per direction, `n_e p`.
    pub fn lines(&self) -> usize {
        self.n_elements * self.degree()
    }

    pub fn jx(&self) -> f64 {
        0.5 * self.lx / self.n_elements as f64
    }

    pub fn jy(&self) -> f64 {
        0.5 * self.ly / self.n_elements as f64
    }

    /// `|J| = J_x J_y`
    pub fn jacobian(&self) -> f64 {
        self.jx() * self.jy()
    }

    pub fn dim_q(&self) -> usize {
        self.lines() * self.lines()
    }

    pub fn dim_u(&self) -> usize {
        2 * self.dim_q()
    }

    /// Tracer DOF `(i, j)` (edge × edge) of element `(ex, ey)`.
    pub fn q_dof(&self, ex: usize, ey: usize, i: usize, j: usize) -> usize {
        let p = self.degree();
        (ey * p + j) * self.lines() + ex * p + i
    }

    /// ξ-directed flux DOF `(i, j)` (node × edge) of element `(ex, ey)`.
    pub fn ux_dof(&self, ex: usize, ey: usize, i: usize, j: usize) -> usize {
        let p = self.degree();
        let n = self.lines();
        (ey * p + j) * n + (ex * p + i) % n
    }

    /// η-directed flux DOF `(i, j)` (edge × node) of element `(ex, ey)`.
    pub fn uy_dof(&self, ex: usize, ey: usize, i: usize, j: usize) -> usize {
        let p = self.degree();
        let n = self.lines();
        n * n + ((ey * p + j) % n) * n + ex * p + i
    }

    /// Global flux DOF of local tensor index `k`.
    pub fn u_dof(&self, ex: usize, ey: usize, k: usize) -> usize {
        let t = TensorBasisIndex::from_k(self.degree(), k);
        match t.component {
            Component::Xi => self.ux_dof(ex, ey, t.i, t.j),
            Component::Eta => self.uy_dof(ex, ey, t.i, t.j),
        }
    }

    pub fn x_of(&self, ex: usize, xi: f64) -> f64 {
        (ex as f64 + 0.5 * (xi + 1.0)) * self.lx / self.n_elements as f64
    }

    pub fn y_of(&self, ey: usize, eta: f64) -> f64 {
        (ey as f64 + 0.5 * (eta + 1.0)) * self.ly / self.n_elements as f64
    }

    /// `(ex, ey, ξ, η)` containing the (wrapped) point.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize, f64, f64) {
        let loc = |v: f64, l: f64| {
            let w = v.rem_euclid(l);
            let h = l / self.n_elements as f64;
            let e = ((w / h).floor() as usize).min(self.n_elements - 1);
            (e, (2.0 * (w - e as f64 * h) / h - 1.0).clamp(-1.0, 1.0))
        };
        let (ex, xi) = loc(x, self.lx);
        let (ey, eta) = loc(y, self.ly);
        (ex, ey, xi, eta)
    }

    /// Element-local tracer mass matrix, local index `i + p j`.
    pub fn local_mass_q(&self) -> DMatrix<f64> {
        let p = self.degree();
        let mx = edge_mass_1d(&self.basis, &self.quadrature, self.jx());
        let my = edge_mass_1d(&self.basis, &self.quadrature, self.jy());
        DMatrix::from_fn(p * p, p * p, |r, c| mx[(r % p, c % p)] * my[(r / p, c / p)])
    }
}

fn edge_mass_1d(basis: &NodalEdgeBasis, quad: &QuadratureRule, jac: f64) -> DMatrix<f64> {
    basis.edge_mass(quad) / jac
}

pub fn build_mesh2d(n_elements: usize, length: f64, p: usize) -> Result<PeriodicMesh2D> {
    PeriodicMesh2D::new(n_elements, length, length, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// `l_i(ξ) e_j(η) 𝒆_ξ`
    Xi,
    /// `e_i(ξ) l_j(η) 𝒆_η`
    Eta,
}

/// Interleaved element-local flux index: `k = 2(j(p+1) + i)` for the
/// ξ-directed functions and `k = 2(jp + i) + 1` for the η-directed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorBasisIndex {
    pub component: Component,
    pub i: usize,
    pub j: usize,
}

impl TensorBasisIndex {
    /// Number of flux functions per element, `2p(p+1)`.
    pub fn count(p: usize) -> usize {
        2 * p * (p + 1)
    }

    pub fn from_k(p: usize, k: usize) -> Self {
        let m = k / 2;
        if k.is_multiple_of(2) {
            Self {
                component: Component::Xi,
                i: m % (p + 1),
                j: m / (p + 1),
            }
        } else {
            Self {
                component: Component::Eta,
                i: m % p,
                j: m / p,
            }
        }
    }

    pub fn to_k(self, p: usize) -> usize {
        match self.component {
            Component::Xi => 2 * (self.j * (p + 1) + self.i),
            Component::Eta => 2 * (self.j * p + self.i) + 1,
        }
    }
}

/// Sparse incidence matrix `E^{2,1}` from flux to tracer DOFs.
pub fn incidence2d(mesh: &PeriodicMesh2D) -> LinearOperator {
    let n = mesh.lines();
    let nq = n * n;
    let mut coo = CooMatrix::new(nq, 2 * nq);
    for gy in 0..n {
        for gx in 0..n {
            let row = gy * n + gx;
            coo.push(row, gy * n + (gx + 1) % n, 1.0);
            coo.push(row, gy * n + gx, -1.0);
            coo.push(row, nq + ((gy + 1) % n) * n + gx, 1.0);
            coo.push(row, nq + gy * n + gx, -1.0);
        }
    }
    LinearOperator::sparse(CsrMatrix::from(&coo))
}

/// `E^{2,1} u` without a matrix.
pub fn apply_incidence2d(n: usize, u: &[f64]) -> Vec<f64> {
    let nq = n * n;
    let mut out = vec![0.0; nq];
    for gy in 0..n {
        for gx in 0..n {
            out[gy * n + gx] = u[gy * n + (gx + 1) % n] - u[gy * n + gx]
                + u[nq + ((gy + 1) % n) * n + gx]
                - u[nq + gy * n + gx];
        }
    }
    out
}

type VelocityFn = dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync;

/// Velocity on the plane, possibly time dependent.
#[derive(Clone)]
pub enum Velocity2D {
    Constant([f64; 2]),
    /// `(x, y, t) ↦ (u, v)`
    Analytic(Arc<VelocityFn>),
}

impl fmt::Debug for Velocity2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Velocity2D::Constant(c) => write!(f, "Constant({c:?})"),
            Velocity2D::Analytic(_) => write!(f, "Analytic(..)"),
        }
    }
}

impl Velocity2D {
    pub fn analytic(f: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        Velocity2D::Analytic(Arc::new(f))
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        match self {
            Velocity2D::Constant(c) => *c,
            Velocity2D::Analytic(f) => f(x, y, t),
        }
    }

    pub fn is_steady(&self) -> bool {
        matches!(self, Velocity2D::Constant(_))
    }

    /// Reversing swirl on the unit square with period `T`.
    pub fn swirl(period: f64) -> Self {
        Velocity2D::analytic(move |x, y, t| {
            let c = (PI * t / period).cos();
            [
                (PI * x).sin().powi(2) * (2.0 * PI * y).sin() * c,
                -(2.0 * PI * x).sin() * (PI * y).sin().powi(2) * c,
            ]
        })
    }
}

/// Assembled 2D matrices at one time level.
#[derive(Debug, Clone)]
pub struct Matrices2D {
    /// `⟨β^u_m, β_l⟩` (Galerkin when unshifted).
    pub mass_u: CsrMatrix<f64>,
    /// `⟨γ_i, γ_k⟩`, block diagonal.
    pub mass_q: CsrMatrix<f64>,
    /// `⟨β^u_m · u, γ_n⟩`
    pub mixed: CsrMatrix<f64>,
    pub shifted: bool,
}

/// Assembles `M_U2`, `M_Q2` and `R2` at time `t`. With `shift = Some(Δt)` the
/// test functions are displaced downstream along the C⁰ direction of each
/// flux component.
pub fn assemble2d(
    mesh: &PeriodicMesh2D,
    vel: &Velocity2D,
    t: f64,
    shift: Option<f64>,
) -> Matrices2D {
    let pattern = FluxPattern::new(mesh);
    let mut mass_u = pattern.mass.clone();
    let mut mixed = pattern.mixed.clone();
    pattern.assemble(mesh, vel, t, shift, Some(&mut mass_u), &mut mixed);
    Matrices2D {
        mass_u,
        mass_q: mass_q2(mesh),
        mixed,
        shifted: shift.is_some(),
    }
}

/// Galerkin `M_U2`; independent of the velocity.
pub fn mass_u2(mesh: &PeriodicMesh2D) -> CsrMatrix<f64> {
    assemble2d(mesh, &Velocity2D::Constant([0.0, 0.0]), 0.0, None).mass_u
}

pub fn mass_q2(mesh: &PeriodicMesh2D) -> CsrMatrix<f64> {
    let p = mesh.degree();
    let local = mesh.local_mass_q();
    let mut coo = CooMatrix::new(mesh.dim_q(), mesh.dim_q());
    for ey in 0..mesh.n_elements() {
        for ex in 0..mesh.n_elements() {
            for r in 0..p * p {
                for c in 0..p * p {
                    coo.push(
                        mesh.q_dof(ex, ey, r % p, r / p),
                        mesh.q_dof(ex, ey, c % p, c / p),
                        local[(r, c)],
                    );
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

const NO_SLOT: usize = usize::MAX;

/// Fixed sparsity of `M_U2` and `R2` with the value slot of every element entry,
/// so that reassembly is a scatter into existing storage.
#[derive(Debug, Clone)]
struct FluxPattern {
    mass: CsrMatrix<f64>,
    mixed: CsrMatrix<f64>,
    /// `nk × nk` per element, `NO_SLOT` between components.
    mass_slots: Vec<usize>,
    /// `nk × p²` per element.
    mixed_slots: Vec<usize>,
}

fn slot(m: &CsrMatrix<f64>, r: usize, c: usize) -> usize {
    let (start, end) = (m.row_offsets()[r], m.row_offsets()[r + 1]);
    let cols = &m.col_indices()[start..end];
    start + cols.binary_search(&c).expect("entry in pattern")
}

impl FluxPattern {
    fn new(mesh: &PeriodicMesh2D) -> Self {
        let ne = mesh.n_elements();
        let p = mesh.degree();
        let nk = TensorBasisIndex::count(p);
        let index: Vec<TensorBasisIndex> =
            (0..nk).map(|k| TensorBasisIndex::from_k(p, k)).collect();
        let mut mass = CooMatrix::new(mesh.dim_u(), mesh.dim_u());
        let mut mixed = CooMatrix::new(mesh.dim_u(), mesh.dim_q());
        for ey in 0..ne {
            for ex in 0..ne {
                for m in 0..nk {
                    let r = mesh.u_dof(ex, ey, m);
                    for l in 0..nk {
                        if index[l].component == index[m].component {
                            mass.push(r, mesh.u_dof(ex, ey, l), 0.0);
                        }
                    }
                    for c in 0..p * p {
                        mixed.push(r, mesh.q_dof(ex, ey, c % p, c / p), 0.0);
                    }
                }
            }
        }
        let mass = CsrMatrix::from(&mass);
        let mixed = CsrMatrix::from(&mixed);
        let mut mass_slots = Vec::with_capacity(ne * ne * nk * nk);
        let mut mixed_slots = Vec::with_capacity(ne * ne * nk * p * p);
        for ey in 0..ne {
            for ex in 0..ne {
                for m in 0..nk {
                    let r = mesh.u_dof(ex, ey, m);
                    for l in 0..nk {
                        mass_slots.push(if index[l].component == index[m].component {
                            slot(&mass, r, mesh.u_dof(ex, ey, l))
                        } else {
                            NO_SLOT
                        });
                    }
                    for c in 0..p * p {
                        mixed_slots.push(slot(&mixed, r, mesh.q_dof(ex, ey, c % p, c / p)));
                    }
                }
            }
        }
        Self {
            mass,
            mixed,
            mass_slots,
            mixed_slots,
        }
    }

    /// Overwrites the values of `mass` (if given) and `mixed`, which must share
    /// this pattern.
    fn assemble(
        &self,
        mesh: &PeriodicMesh2D,
        vel: &Velocity2D,
        t: f64,
        shift: Option<f64>,
        mass_out: Option<&mut CsrMatrix<f64>>,
        mixed_out: &mut CsrMatrix<f64>,
    ) {
        let with_mass = mass_out.is_some();
        let ne = mesh.n_elements();
        let p = mesh.degree();
        let nk = TensorBasisIndex::count(p);
        let basis = mesh.basis();
        let quad = mesh.quadrature();
        let (jx, jy) = (mesh.jx(), mesh.jy());
        let nq = quad.len();
        // values at the unshifted quadrature points, shared by all elements
        let mut lq = vec![vec![0.0; p + 1]; nq];
        let mut eq = vec![vec![0.0; p]; nq];
        for (a, &xi) in quad.points.iter().enumerate() {
            basis.nodal_values(xi, &mut lq[a]);
            basis.edge_values(xi, &mut eq[a]);
        }
        let index: Vec<TensorBasisIndex> =
            (0..nk).map(|k| TensorBasisIndex::from_k(p, k)).collect();
        let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..ne * ne)
            .into_par_iter()
            .map(|el| {
                let (ex, ey) = (el % ne, el / ne);
                let mut mass = vec![0.0; if with_mass { nk * nk } else { 0 }];
                let mut mixed = vec![0.0; nk * p * p];
                let mut test = vec![0.0; nk];
                let mut trial = vec![0.0; nk];
                let mut ls = vec![0.0; p + 1];
                for a in 0..nq {
                    let x = mesh.x_of(ex, quad.points[a]);
                    for b in 0..nq {
                        let y = mesh.y_of(ey, quad.points[b]);
                        let w = quad.weights[a] * quad.weights[b];
                        let [ux, uy] = vel.eval(x, y, t);
                        // ξ-directed: l_i(ξ^d) e_j(η); η-directed: e_i(ξ) l_j(η^d)
                        let lx_test: &[f64] = match shift {
                            Some(dt) => {
                                basis.nodal_values(quad.points[a] + dt * ux / jx, &mut ls);
                                &ls
                            }
                            None => &lq[a],
                        };
                        for (k, ix) in index.iter().enumerate() {
                            if ix.component == Component::Xi {
                                test[k] = lx_test[ix.i] * eq[b][ix.j];
                                trial[k] = lq[a][ix.i] * eq[b][ix.j];
                            }
                        }
                        let ly_test: &[f64] = match shift {
                            Some(dt) => {
                                basis.nodal_values(quad.points[b] + dt * uy / jy, &mut ls);
                                &ls
                            }
                            None => &lq[b],
                        };
                        for (k, ix) in index.iter().enumerate() {
                            if ix.component == Component::Eta {
                                test[k] = eq[a][ix.i] * ly_test[ix.j];
                                trial[k] = eq[a][ix.i] * lq[b][ix.j];
                            }
                        }
                        for (m, im) in index.iter().enumerate() {
                            let (scale, u) = match im.component {
                                Component::Xi => (jx / jy, ux / jy),
                                Component::Eta => (jy / jx, uy / jx),
                            };
                            let tm = w * test[m];
                            if tm == 0.0 {
                                continue;
                            }
                            if with_mass {
                                for (l, il) in index.iter().enumerate() {
                                    if il.component == im.component {
                                        mass[m * nk + l] += tm * trial[l] * scale;
                                    }
                                }
                            }
                            if u != 0.0 {
                                for jq in 0..p {
                                    for iq in 0..p {
                                        mixed[m * p * p + iq + p * jq] +=
                                            tm * u * eq[a][iq] * eq[b][jq];
                                    }
                                }
                            }
                        }
                    }
                }
                (mass, mixed)
            })
            .collect();
        if let Some(out) = mass_out {
            let values = out.values_mut();
            values.fill(0.0);
            for (el, (mass, _)) in blocks.iter().enumerate() {
                let slots = &self.mass_slots[el * nk * nk..(el + 1) * nk * nk];
                for (&s, &v) in slots.iter().zip(mass) {
                    if s != NO_SLOT {
                        values[s] += v;
                    }
                }
            }
        }
        let values = mixed_out.values_mut();
        values.fill(0.0);
        let per = nk * p * p;
        for (el, (_, mixed)) in blocks.iter().enumerate() {
            for (&s, &v) in self.mixed_slots[el * per..(el + 1) * per].iter().zip(mixed) {
                values[s] += v;
            }
        }
    }
}

/// Solves for fluxes, keeping the previous solution as the initial guess.
#[derive(Debug, Clone)]
pub struct FluxSolver {
    pub config: IterativeConfig,
    guess: Vec<f64>,
    /// Largest iteration count seen.
    pub max_iterations_used: usize,
}

impl FluxSolver {
    pub fn new(dim_u: usize) -> Self {
        Self {
            config: IterativeConfig::default(),
            guess: vec![0.0; dim_u],
            max_iterations_used: 0,
        }
    }

    /// `M x = b`; conjugate gradients when `spd`, BiCGSTAB otherwise.
    pub fn solve(&mut self, m: &CsrMatrix<f64>, b: &[f64], spd: bool) -> Result<Vec<f64>> {
        let mut x = self.guess.clone();
        let stats = if spd {
            conjugate_gradient(m, b, &mut x, self.config)?
        } else {
            bicgstab(m, b, &mut x, self.config)?
        };
        self.max_iterations_used = self.max_iterations_used.max(stats.iterations);
        self.guess.clone_from(&x);
        Ok(x)
    }
}

fn csr_mul(m: &CsrMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    csr_apply(m, x, &mut y);
    y
}

/// RK3 advection on the plane with optional upwinding.
#[derive(Debug)]
pub struct Advector2D<'m> {
    mesh: &'m PeriodicMesh2D,
    velocity: Velocity2D,
    dt: f64,
    upwind: bool,
    pattern: FluxPattern,
    mass_u: CsrMatrix<f64>,
    mixed: CsrMatrix<f64>,
    assembled: bool,
    solver: FluxSolver,
}

impl<'m> Advector2D<'m> {
    pub fn new(mesh: &'m PeriodicMesh2D, velocity: Velocity2D, dt: f64, upwind: bool) -> Self {
        let pattern = FluxPattern::new(mesh);
        let mut mass_u = pattern.mass.clone();
        let mut mixed = pattern.mixed.clone();
        if !upwind {
            let still = Velocity2D::Constant([0.0, 0.0]);
            pattern.assemble(mesh, &still, 0.0, None, Some(&mut mass_u), &mut mixed);
        }
        Self {
            mesh,
            velocity,
            dt,
            upwind,
            pattern,
            mass_u,
            mixed,
            assembled: false,
            solver: FluxSolver::new(mesh.dim_u()),
        }
    }

    pub fn solver(&self) -> &FluxSolver {
        &self.solver
    }

    /// Flux `F = M_U2⁻¹ R2 q` at time `t`.
    pub fn flux(&mut self, t: f64, q: &[f64]) -> Result<Vec<f64>> {
        if !(self.assembled && self.velocity.is_steady()) {
            let shift = self.upwind.then_some(self.dt);
            let mass = self.upwind.then_some(&mut self.mass_u);
            self.pattern
                .assemble(self.mesh, &self.velocity, t, shift, mass, &mut self.mixed);
            self.assembled = true;
        }
        let rhs = csr_mul(&self.mixed, q);
        self.solver.solve(&self.mass_u, &rhs, !self.upwind)
    }

    /// Tendency `y = E^{2,1} F` so that `q̇ = −y`.
    pub fn tendency(&mut self, t: f64, q: &[f64]) -> Result<Vec<f64>> {
        let f = self.flux(t, q)?;
        Ok(apply_incidence2d(self.mesh.lines(), &f))
    }

    /// One RK3 step from time `t`.
    pub fn step(&mut self, q: &[f64], t: f64) -> Result<Vec<f64>> {
        let dt = self.dt;
        step_rk3(q, t, dt, |s, x| self.tendency(s, x))
    }
}

/// One RK3 step with fresh matrices; prefer [`Advector2D`] in loops.
pub fn advect2d_step(
    mesh: &PeriodicMesh2D,
    velocity: &Velocity2D,
    q: &[f64],
    t: f64,
    dt: f64,
    upwind: bool,
) -> Result<Vec<f64>> {
    Advector2D::new(mesh, velocity.clone(), dt, upwind).step(q, t)
}

/// L² projection onto the tracer space.
pub fn project2d(mesh: &PeriodicMesh2D, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Vec<f64>> {
    let p = mesh.degree();
    let chol = mesh
        .local_mass_q()
        .cholesky()
        .ok_or_else(|| Error::Singular {
            context: "2D tracer mass matrix".into(),
            condition: f64::INFINITY,
        })?;
    let quad = gauss_rule(p + 5)?;
    let basis = mesh.basis();
    let ev: Vec<Vec<f64>> = quad
        .points
        .iter()
        .map(|&xi| {
            let mut v = vec![0.0; p];
            basis.edge_values(xi, &mut v);
            v
        })
        .collect();
    let ne = mesh.n_elements();
    let mut out = vec![0.0; mesh.dim_q()];
    let cells: Vec<(usize, Vec<f64>)> = (0..ne * ne)
        .into_par_iter()
        .map(|el| {
            let (ex, ey) = (el % ne, el / ne);
            let mut rhs = DVector::zeros(p * p);
            for (a, &xi) in quad.points.iter().enumerate() {
                for (b, &eta) in quad.points.iter().enumerate() {
                    let w = quad.weights[a]
                        * quad.weights[b]
                        * f(mesh.x_of(ex, xi), mesh.y_of(ey, eta));
                    for j in 0..p {
                        for i in 0..p {
                            rhs[i + p * j] += w * ev[a][i] * ev[b][j];
                        }
                    }
                }
            }
            (el, chol.solve(&rhs).as_slice().to_vec())
        })
        .collect();
    for (el, v) in cells {
        let (ex, ey) = (el % ne, el / ne);
        for (c, val) in v.into_iter().enumerate() {
            out[mesh.q_dof(ex, ey, c % p, c / p)] = val;
        }
    }
    Ok(out)
}

/// Tracer value at a point.
pub fn eval2d(mesh: &PeriodicMesh2D, q: &[f64], x: f64, y: f64) -> f64 {
    let p = mesh.degree();
    let (ex, ey, xi, eta) = mesh.locate(x, y);
    let mut ex_v = vec![0.0; p];
    let mut ey_v = vec![0.0; p];
    mesh.basis().edge_values(xi, &mut ex_v);
    mesh.basis().edge_values(eta, &mut ey_v);
    let mut s = 0.0;
    for j in 0..p {
        for i in 0..p {
            s += q[mesh.q_dof(ex, ey, i, j)] * ex_v[i] * ey_v[j];
        }
    }
    s / mesh.jacobian()
}

/// Values on the `m × m` cell-centred grid, row-major in `y`.
pub fn sample_grid(mesh: &PeriodicMesh2D, q: &[f64], m: usize) -> Vec<f64> {
    let (lx, ly) = mesh.lengths();
    (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % m, idx / m);
            eval2d(
                mesh,
                q,
                (i as f64 + 0.5) * lx / m as f64,
                (j as f64 + 0.5) * ly / m as f64,
            )
        })
        .collect()
}

/// `‖q_h − f‖ / ‖f‖` by element quadrature.
pub fn l2_error2d(mesh: &PeriodicMesh2D, q: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let quad = gauss_rule(mesh.degree() + 5).expect("valid rule");
    let ne = mesh.n_elements();
    let jac = mesh.jacobian();
    // element sums collected first so the total does not depend on scheduling
    let parts: Vec<(f64, f64)> = (0..ne * ne)
        .into_par_iter()
        .map(|el| {
            let (ex, ey) = (el % ne, el / ne);
            let mut num = 0.0;
            let mut den = 0.0;
            for (a, &xi) in quad.points.iter().enumerate() {
                for (b, &eta) in quad.points.iter().enumerate() {
                    let (x, y) = (mesh.x_of(ex, xi), mesh.y_of(ey, eta));
                    let exact = f(x, y);
                    let d = eval2d(mesh, q, x, y) - exact;
                    let w = quad.weights[a] * quad.weights[b] * jac;
                    num += w * d * d;
                    den += w * exact * exact;
                }
            }
            (num, den)
        })
        .collect();
    let (num, den) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    (num / den).sqrt()
}

/// `∫|∂_x q| + |∂_y q|` approximated by differences on an `m × m` grid.
pub fn total_variation2d(vals: &[f64], m: usize, lx: f64, ly: f64) -> f64 {
    let mut tv = 0.0;
    for j in 0..m {
        for i in 0..m {
            let v = vals[j * m + i];
            tv += (vals[j * m + (i + 1) % m] - v).abs() * ly / m as f64;
            tv += (vals[((j + 1) % m) * m + i] - v).abs() * lx / m as f64;
        }
    }
    tv
}

pub fn write_snapshot_csv<W: Write>(
    mut w: W,
    mesh: &PeriodicMesh2D,
    q: &[f64],
    m: usize,
) -> std::io::Result<()> {
    let (lx, ly) = mesh.lengths();
    let vals = sample_grid(mesh, q, m);
    writeln!(w, "x,y,value")?;
    for j in 0..m {
        for i in 0..m {
            writeln!(
                w,
                "{:.10e},{:.10e},{:.15e}",
                (i as f64 + 0.5) * lx / m as f64,
                (j as f64 + 0.5) * ly / m as f64,
                vals[j * m + i]
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    Translation,
    Deformational,
}

impl std::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "translation" => Ok(TestKind::Translation),
            "deformational" | "deformation" => Ok(TestKind::Deformational),
            other => Err(Error::InvalidArgument(format!("unknown 2D test {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Test2DConfig {
    pub kind: TestKind,
    pub n_elements: usize,
    pub p: usize,
    pub dt: f64,
    /// Period of the velocity field (swirl) or of the domain crossing (translation).
    pub period: f64,
    /// End of the run; one period unless changed.
    pub t_final: f64,
    pub upwind: bool,
    /// Grid resolution per cell line used for TV and extrema.
    pub samples_per_line: usize,
    /// Snapshot interval in steps; 0 means initial and final states only.
    pub snapshot_every: usize,
}

impl Test2DConfig {
    /// Translation by `(1, 1)` over one period of the unit square.
    pub fn translation(n_elements: usize, p: usize, dt: f64) -> Self {
        Self {
            kind: TestKind::Translation,
            n_elements,
            p,
            dt,
            period: 1.0,
            t_final: 1.0,
            upwind: true,
            samples_per_line: 8,
            snapshot_every: 0,
        }
    }

    /// Two cosine bells in the reversing swirl.
    pub fn deformational(n_elements: usize, p: usize, dt: f64, period: f64, upwind: bool) -> Self {
        Self {
            kind: TestKind::Deformational,
            n_elements,
            p,
            dt,
            period,
            t_final: period,
            upwind,
            samples_per_line: 8,
            snapshot_every: 0,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report2D {
    pub config: Test2DConfig,
    pub steps: usize,
    /// Normalized L² error at the final time, when the exact solution is known
    /// there (any time for translation, whole periods for the swirl).
    pub l2_error: Option<f64>,
    /// Mass after each step, starting with the initial mass.
    pub mass: Vec<f64>,
    pub max_relative_mass_error: f64,
    /// Extrema of point samples.
    pub max_abs_initial: f64,
    pub max_abs_final: f64,
    /// Largest `|q|` among sub-cell means, initially and over all steps.
    pub max_mean_initial: f64,
    pub max_mean_peak: f64,
    pub tv_initial: f64,
    pub tv_final: f64,
    pub max_solver_iterations: usize,
}

/// Sub-cell means of a tracer: each DOF is the integral over its sub-cell.
pub fn cell_means(mesh: &PeriodicMesh2D, q: &[f64]) -> Vec<f64> {
    let p = mesh.degree();
    let nodes = mesh.basis().nodes();
    let mut out = vec![0.0; q.len()];
    for ey in 0..mesh.n_elements() {
        for ex in 0..mesh.n_elements() {
            for j in 0..p {
                for i in 0..p {
                    let area = mesh.jx()
                        * mesh.jy()
                        * (nodes[i + 1] - nodes[i])
                        * (nodes[j + 1] - nodes[j]);
                    let k = mesh.q_dof(ex, ey, i, j);
                    out[k] = q[k] / area;
                }
            }
        }
    }
    out
}

/// Periodic Gaussian of width 0.1 centred on the unit square.
pub fn gaussian(x: f64, y: f64) -> f64 {
    let s2 = 2.0 * (0.1 * PI).powi(2);
    (-((PI * (x - 0.5)).sin().powi(2) + (PI * (y - 0.5)).sin().powi(2)) / s2).exp()
}

pub fn cosine_bells(x: f64, y: f64) -> f64 {
    let r = 0.15;
    let bell = |cx: f64, cy: f64| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        if d < r {
            0.5 * (1.0 + (PI * d / r).cos())
        } else {
            0.0
        }
    };
    bell(0.5, 0.25) + bell(0.5, 0.75)
}

/// Runs a planar test. `snapshot(step, mesh, q)` is called for the initial
/// state, every `snapshot_every` steps and the final state.
pub fn run_tests2d_with(
    cfg: &Test2DConfig,
    mut snapshot: impl FnMut(usize, &PeriodicMesh2D, &[f64]) -> Result<()>,
) -> Result<Report2D> {
    if [cfg.dt, cfg.period, cfg.t_final].iter().any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::InvalidArgument(
            "dt, period and t_final must be positive".into(),
        ));
    }
    if cfg.samples_per_line == 0 {
        return Err(Error::InvalidArgument(
            "samples_per_line must be positive".into(),
        ));
    }
    let mesh = build_mesh2d(cfg.n_elements, 1.0, cfg.p)?;
    let (velocity, f): (Velocity2D, fn(f64, f64) -> f64) = match cfg.kind {
        TestKind::Translation => (Velocity2D::Constant([1.0, 1.0]), gaussian),
        TestKind::Deformational => (Velocity2D::swirl(cfg.period), cosine_bells),
    };
    let m = cfg.samples_per_line * mesh.lines();
    let mut q = project2d(&mesh, f)?;
    snapshot(0, &mesh, &q)?;
    let grid0 = sample_grid(&mesh, &q, m);
    let max_abs = |v: &[f64]| v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let max_mean_initial = max_abs(&cell_means(&mesh, &q));
    let mut max_mean_peak = max_mean_initial;
    let m0: f64 = q.iter().sum();
    let mut mass = vec![m0];
    let mut adv = Advector2D::new(&mesh, velocity, cfg.dt, cfg.upwind);
    let steps = cfg.n_steps();
    for n in 0..steps {
        q = adv.step(&q, n as f64 * cfg.dt)?;
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(n + 1));
        }
        mass.push(q.iter().sum());
        max_mean_peak = max_mean_peak.max(max_abs(&cell_means(&mesh, &q)));
        let k = n + 1;
        if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 && k != steps {
            snapshot(k, &mesh, &q)?;
        }
    }
    snapshot(steps, &mesh, &q)?;
    let grid1 = sample_grid(&mesh, &q, m);
    let t = steps as f64 * cfg.dt;
    let l2_error = match cfg.kind {
        TestKind::Translation => Some(l2_error2d(&mesh, &q, |x, y| gaussian(x - t, y - t))),
        TestKind::Deformational => {
            let periods = t / cfg.period;
            ((periods - periods.round()).abs() < 1e-9).then(|| l2_error2d(&mesh, &q, f))
        }
    };
    Ok(Report2D {
        config: cfg.clone(),
        steps,
        l2_error,
        max_relative_mass_error: mass
            .iter()
            .map(|v| (v - m0).abs() / m0.abs())
            .fold(0.0, f64::max),
        mass,
        max_abs_initial: max_abs(&grid0),
        max_abs_final: max_abs(&grid1),
        max_mean_initial,
        max_mean_peak,
        tv_initial: total_variation2d(&grid0, m, 1.0, 1.0),
        tv_final: total_variation2d(&grid1, m, 1.0, 1.0),
        max_solver_iterations: adv.solver().max_iterations_used,
    })
}

pub fn run_tests2d(cfg: &Test2DConfig) -> Result<Report2D> {
    run_tests2d_with(cfg, |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_index_bijection() {
        for p in 1..=4 {
            let n = TensorBasisIndex::count(p);
            let mut seen = vec![false; n];
            for j in 0..p {
                for i in 0..=p {
                    let t = TensorBasisIndex {
                        component: Component::Xi,
                        i,
                        j,
                    };
                    let k = t.to_k(p);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(TensorBasisIndex::from_k(p, k), t);
                }
            }
            for j in 0..=p {
                for i in 0..p {
                    let t = TensorBasisIndex {
                        component: Component::Eta,
                        i,
                        j,
                    };
                    let k = t.to_k(p);
                    assert!(!seen[k]);
                    seen[k] = true;
                    assert_eq!(TensorBasisIndex::from_k(p, k), t);
                }
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn incidence_structure() {
        let mesh = build_mesh2d(2, 1.0, 1).unwrap();
        let e = incidence2d(&mesh).to_dense();
        assert_eq!(e.shape(), (4, 8));
        for r in 0..4 {
            let row: Vec<f64> = e.row(r).iter().cloned().filter(|v| *v != 0.0).collect();
            assert_eq!(row.len(), 4);
            assert_eq!(row.iter().filter(|v| **v == 1.0).count(), 2);
        }
        // Kronecker oracle: E = [I ⊗ E_x, E_y ⊗ I]
        for (ne, p) in [(2, 1), (3, 2), (2, 3)] {
            let mesh = build_mesh2d(ne, 1.0, p).unwrap();
            let n = mesh.lines();
            let e1 = crate::assembly::incidence_matrix(n);
            let eye = DMatrix::<f64>::identity(n, n);
            let mut oracle = DMatrix::zeros(n * n, 2 * n * n);
            oracle
                .view_mut((0, 0), (n * n, n * n))
                .copy_from(&eye.kronecker(&e1));
            oracle
                .view_mut((0, n * n), (n * n, n * n))
                .copy_from(&e1.kronecker(&eye));
            let e = incidence2d(&mesh).to_dense();
            assert_eq!(e, oracle);
            for c in 0..e.ncols() {
                assert_eq!(e.column(c).sum(), 0.0);
            }
        }
    }

    #[test]
    fn uniform_translation_is_divergence_free() {
        let mesh = build_mesh2d(3, 1.0, 2).unwrap();
        let n = mesh.lines();
        let mut u = vec![0.7; n * n];
        u.extend(vec![-0.2; n * n]);
        assert!(apply_incidence2d(n, &u).iter().all(|v| *v == 0.0));
        assert_eq!(incidence2d(&mesh).apply(&u), apply_incidence2d(n, &u));
    }

    #[test]
    fn zero_velocity_gives_zero_mixed() {
        let mesh = build_mesh2d(3, 1.0, 2).unwrap();
        let m = assemble2d(&mesh, &Velocity2D::Constant([0.0, 0.0]), 0.0, Some(0.1));
        assert!(m.mixed.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_shift_matches_unshifted() {
        let mesh = build_mesh2d(3, 1.0, 3).unwrap();
        let vel = Velocity2D::swirl(5.0);
        let a = assemble2d(&mesh, &vel, 0.3, None);
        let b = assemble2d(&mesh, &vel, 0.3, Some(0.0));
        let diff = |x: &CsrMatrix<f64>, y: &CsrMatrix<f64>| {
            let d = LinearOperator::sparse(x.clone()).to_dense()
                - LinearOperator::sparse(y.clone()).to_dense();
            d.amax()
        };
        assert!(diff(&a.mass_u, &b.mass_u) <= 1e-14);
        assert!(diff(&a.mixed, &b.mixed) <= 1e-14);
    }

    #[test]
    fn mass_matrices_are_tensor_products() {
        let mesh = PeriodicMesh2D::new(3, 2.0, 1.0, 2).unwrap();
        let m1x = crate::mesh::PeriodicMesh1D::new(3, 2.0, 2).unwrap();
        let m1y = crate::mesh::PeriodicMesh1D::new(3, 1.0, 2).unwrap();
        let mu = LinearOperator::sparse(mass_u2(&mesh)).to_dense();
        let n = mesh.lines();
        let ux = crate::assembly::mass_u(&m1x).into_dense();
        let qy = crate::assembly::mass_q(&m1y).into_dense();
        let uy = crate::assembly::mass_u(&m1y).into_dense();
        let qx = crate::assembly::mass_q(&m1x).into_dense();
        // ξ block: rows (gy, gx) = gy N + gx, entry M_Q^y[gy,gy'] M_U^x[gx,gx']
        let xx = qy.kronecker(&ux);
        let yy = uy.kronecker(&qx);
        assert!((mu.view((0, 0), (n * n, n * n)) - &xx).amax() < 1e-14);
        assert!((mu.view((n * n, n * n), (n * n, n * n)) - &yy).amax() < 1e-14);
        assert_eq!(mu.view((0, n * n), (n * n, n * n)).amax(), 0.0);
        let mq = LinearOperator::sparse(mass_q2(&mesh)).to_dense();
        assert!((mq - qy.kronecker(&qx)).amax() < 1e-13);
    }

    #[test]
    fn constant_tracer_gives_constant_flux() {
        let mesh = build_mesh2d(4, 1.0, 3).unwrap();
        let c = 0.6;
        let vel = Velocity2D::Constant([c, 0.0]);
        let q = project2d(&mesh, |_, _| 1.0).unwrap();
        let m = assemble2d(&mesh, &vel, 0.0, None);
        let rhs = csr_mul(&m.mixed, &q);
        // direct dense solve as the oracle
        let dense = LinearOperator::sparse(m.mass_u.clone()).to_dense();
        let f = dense.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let n = mesh.lines();
        let nodes = mesh.basis().nodes();
        let p = mesh.degree();
        for gy in 0..n {
            let j = gy % p;
            let expected = c * mesh.jy() * (nodes[j + 1] - nodes[j]);
            for gx in 0..n {
                assert!((f[gy * n + gx] - expected).abs() < 1e-12);
                assert!(f[n * n + gy * n + gx].abs() < 1e-12);
            }
        }
        assert!(apply_incidence2d(n, f.as_slice())
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_velocity_step_is_identity() {
        let mesh = build_mesh2d(3, 1.0, 2).unwrap();
        let q = project2d(&mesh, gaussian).unwrap();
        let out = advect2d_step(
            &mesh,
            &Velocity2D::Constant([0.0, 0.0]),
            &q,
            0.0,
            0.01,
            true,
        )
        .unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn step_conserves_mass_with_upwinding() {
        let mesh = build_mesh2d(6, 1.0, 3).unwrap();
        let q = project2d(&mesh, cosine_bells).unwrap();
        let m0: f64 = q.iter().sum();
        for upwind in [false, true] {
            let out = advect2d_step(&mesh, &Velocity2D::swirl(5.0), &q, 0.0, 0.02, upwind).unwrap();
            let m1: f64 = out.iter().sum();
            assert!((m1 - m0).abs() <= 1e-12 * m0);
        }
    }

    #[test]
    fn cg_iterations_bounded() {
        for ne in [4, 8] {
            let mesh = build_mesh2d(ne, 1.0, 3).unwrap();
            let q = project2d(&mesh, gaussian).unwrap();
            let mut adv = Advector2D::new(&mesh, Velocity2D::Constant([1.0, 0.5]), 0.01, false);
            adv.flux(0.0, &q).unwrap();
            let bound = 10.0 * (mesh.dim_u() as f64).sqrt();
            assert!((adv.solver().max_iterations_used as f64) <= bound);
        }
    }

    #[test]
    fn projection_and_evaluation() {
        let mesh = build_mesh2d(4, 1.0, 3).unwrap();
        let f = |x: f64, y: f64| 1.0 + x - 2.0 * y;
        let q = project2d(&mesh, f).unwrap();
        assert!(l2_error2d(&mesh, &q, f) < 1e-13);
        assert!((eval2d(&mesh, &q, 0.31, 0.77) - f(0.31, 0.77)).abs() < 1e-12);
        let total: f64 = q.iter().sum();
        assert!((total - 0.5).abs() < 1e-13);
    }

    #[test]
    fn cell_means_of_affine_field() {
        let mesh = build_mesh2d(3, 1.0, 3).unwrap();
        let f = |x: f64, y: f64| 1.0 + x - 2.0 * y;
        let q = project2d(&mesh, f).unwrap();
        let means = cell_means(&mesh, &q);
        let nodes = mesh.basis().nodes();
        for (ex, ey, i, j) in [(0, 0, 0, 0), (1, 2, 2, 1), (2, 1, 1, 2)] {
            let xc = mesh.x_of(ex, 0.5 * (nodes[i] + nodes[i + 1]));
            let yc = mesh.y_of(ey, 0.5 * (nodes[j] + nodes[j + 1]));
            assert!((means[mesh.q_dof(ex, ey, i, j)] - f(xc, yc)).abs() < 1e-13);
        }
    }

    #[test]
    fn short_translation_report() {
        let mut cfg = Test2DConfig::translation(4, 2, 0.01);
        cfg.t_final = 0.05;
        let r = run_tests2d(&cfg).unwrap();
        assert_eq!(r.steps, 5);
        assert_eq!(r.mass.len(), 6);
        assert!(r.max_relative_mass_error < 1e-12);
        assert!(r.l2_error.unwrap() < 0.2);
        let mut swirl = Test2DConfig::deformational(4, 2, 0.01, 1.0, true);
        swirl.t_final = 0.05;
        assert_eq!(run_tests2d(&swirl).unwrap().l2_error, None);
    }
}
