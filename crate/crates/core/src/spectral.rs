//! Eigenvalue analysis of the semi-discrete operators: dispersion relations
//! paired with Fourier modes, amplification spectra of the centered map, and
//! CFL × wavenumber stability scans.
//!
//! Dispersion records use the growth-rate / frequency convention
//! `q ∝ exp(ω_r t) exp(i(κx − ω_i t))`, so for `M q̇ + K q = 0` with
//! `λ = eig(M⁻¹K)` we report `ω_r = −Re λ` and `ω_i = Im λ`. Dissipative
//! modes have `ω_r < 0`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::assembly::{mass_q, VelocityModel};
use crate::error::{Error, Result};
use crate::linalg::{DenseLu, LinearOperator};
use crate::mesh::PeriodicMesh1D;
use crate::operators::{build_operator, OperatorKind};

/// Residual bound on `‖K v − λ M v‖ / (‖K‖ ‖v‖)`.
pub const EIG_RESIDUAL: f64 = 1e-9;
/// Two Fourier amplitudes closer than this (relative) are a tie.
pub const PAIRING_TIE: f64 = 1e-12;

const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: Complex64,
    /// Unit 2-norm.
    pub vector: DVector<Complex64>,
}

/// Eigen-decomposition of a general real square matrix.
///
/// Complex Schur form, then eigenvectors of the triangular factor by back
/// substitution.
pub fn eig_dense(c: &DMatrix<f64>) -> Result<Vec<EigenPair>> {
    if !c.is_square() {
        return Err(Error::DimensionMismatch {
            expected: c.nrows(),
            found: c.ncols(),
        });
    }
    let n = c.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let cz: DMatrix<Complex64> = c.map(|v| Complex64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(cz, f64::EPSILON, SCHUR_MAX_ITER).ok_or_else(|| {
        Error::Eigen(format!(
            "Schur iteration did not converge within {SCHUR_MAX_ITER} iterations (n = {n})"
        ))
    })?;
    let (z, t) = schur.unpack();
    let tnorm = t
        .iter()
        .map(|v| v.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let small = f64::EPSILON * tnorm;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = DVector::<Complex64>::zeros(n);
        y[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in i + 1..=k {
                s += t[(i, j)] * y[j];
            }
            let mut d = t[(i, i)] - lambda;
            if d.norm() < small {
                d = Complex64::new(small, 0.0);
            }
            y[i] = -s / d;
            // rescale to avoid overflow for nearly defective spectra
            let big = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if big > 1e100 {
                y /= Complex64::new(big, 0.0);
            }
        }
        let mut v = &z * y;
        let nv = v.norm();
        v /= Complex64::new(nv, 0.0);
        out.push(EigenPair {
            value: lambda,
            vector: v,
        });
    }
    Ok(out)
}

/// All eigenpairs of `M⁻¹K`, each checked against the generalized residual.
pub fn eig_generalized(m: &LinearOperator, k: &LinearOperator) -> Result<Vec<EigenPair>> {
    let md = m.to_dense();
    let kd = k.to_dense();
    if md.shape() != kd.shape() {
        return Err(Error::DimensionMismatch {
            expected: md.nrows(),
            found: kd.nrows(),
        });
    }
    let c = DenseLu::new(md.clone(), "mass matrix")?.solve_matrix(&kd)?;
    let pairs = eig_dense(&c)?;
    let knorm = kd.norm();
    let mz = md.map(|v| Complex64::new(v, 0.0));
    let kz = kd.map(|v| Complex64::new(v, 0.0));
    for p in &pairs {
        let r = (&kz * &p.vector - (&mz * &p.vector) * p.value).norm();
        if r > EIG_RESIDUAL * knorm * p.vector.norm() {
            return Err(Error::Eigen(format!(
                "eigenpair λ = {} has residual {r:e} (‖K‖ = {knorm:e})",
                p.value
            )));
        }
    }
    Ok(pairs)
}

/// Eigenvalues of the centered one-step map `(M + Δt/2 K)⁻¹ (M − Δt/2 K)`.
pub fn amplification_spectrum(
    m: &LinearOperator,
    k: &LinearOperator,
    dt: f64,
) -> Result<Vec<Complex64>> {
    Ok(amplification_pairs(m, k, dt)?
        .into_iter()
        .map(|p| p.value)
        .collect())
}

fn amplification_pairs(m: &LinearOperator, k: &LinearOperator, dt: f64) -> Result<Vec<EigenPair>> {
    let md = m.to_dense();
    let kd = k.to_dense();
    let lhs = DenseLu::new(&md + &kd * (0.5 * dt), "centered system matrix")?;
    let g = lhs.solve_matrix(&(&md - &kd * (0.5 * dt)))?;
    eig_dense(&g)
}

/// Fourier wavenumbers `−⌊n/2⌋ … ⌈n/2⌉ − 1`.
pub fn fourier_modes(n: usize) -> Vec<i64> {
    let lo = -((n / 2) as i64);
    (0..n as i64).map(|j| lo + j).collect()
}

/// Sample points `x_j = (j + ½) L / n`, `n = n_e p`.
pub fn sample_points(mesh: &PeriodicMesh1D) -> Vec<f64> {
    crate::mesh::uniform_points(mesh.length(), mesh.dim_q())
}

/// `Q_jk = e_k(ξ_j)` mapping edge coefficients to point values (local
/// coordinates, no Jacobian factor).
pub fn sample_matrix(mesh: &PeriodicMesh1D) -> DMatrix<f64> {
    let n = mesh.dim_q();
    let p = mesh.degree();
    let mut q = DMatrix::zeros(n, n);
    let mut ev = vec![0.0; p];
    for (j, &x) in sample_points(mesh).iter().enumerate() {
        let (e, xi) = mesh.locate(x);
        mesh.basis().edge_values(xi, &mut ev);
        for (k, v) in ev.iter().enumerate() {
            q[(j, mesh.edge_dof(e, k))] = *v;
        }
    }
    q
}

/// Fourier amplitudes `F⁻¹ Q v`. The sample points are uniform, so `F` is
/// `√n` times a unitary matrix and the inverse is its scaled adjoint.
pub fn fourier_coefficients(
    mesh: &PeriodicMesh1D,
    q: &DMatrix<f64>,
    v: &DVector<Complex64>,
) -> Vec<Complex64> {
    let n = mesh.dim_q();
    let xs = sample_points(mesh);
    let qv: Vec<Complex64> = (0..n)
        .map(|j| (0..n).map(|c| v[c] * q[(j, c)]).sum())
        .collect();
    let two_pi_over_l = 2.0 * std::f64::consts::PI / mesh.length();
    fourier_modes(n)
        .into_iter()
        .map(|k| {
            let s: Complex64 = xs
                .iter()
                .zip(&qv)
                .map(|(&x, &val)| val * Complex64::from_polar(1.0, -two_pi_over_l * k as f64 * x))
                .sum();
            s / n as f64
        })
        .collect()
}

/// Index of the dominant amplitude, ties resolved towards smaller `|k|`
/// and then towards `k ≥ 0`.
fn dominant(modes: &[i64], amps: &[f64]) -> usize {
    let top = amps.iter().cloned().fold(0.0, f64::max);
    let tol = PAIRING_TIE * top.max(f64::MIN_POSITIVE);
    let mut best: Option<usize> = None;
    for (i, &a) in amps.iter().enumerate() {
        if top - a > tol {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let key = |i: usize| (modes[i].abs(), modes[i] < 0);
                if key(i) < key(b) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionRecord {
    pub k: i64,
    pub omega_re: f64,
    pub omega_im: f64,
    pub dominant_amplitude: f64,
}

/// Pairs each eigenpair of `M⁻¹K` with its dominant Fourier mode.
/// `scale` normalizes the eigenvalue (use `u 2π / L` so the exact relation
/// is `ω_i = k`).
pub fn fourier_pair(
    mesh: &PeriodicMesh1D,
    pairs: &[EigenPair],
    scale: f64,
) -> Result<Vec<DispersionRecord>> {
    if !(scale != 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "normalization {scale} must be nonzero"
        )));
    }
    let q = sample_matrix(mesh);
    let modes = fourier_modes(mesh.dim_q());
    pairs
        .iter()
        .map(|p| {
            if p.vector.len() != mesh.dim_q() {
                return Err(Error::DimensionMismatch {
                    expected: mesh.dim_q(),
                    found: p.vector.len(),
                });
            }
            let amps: Vec<f64> = fourier_coefficients(mesh, &q, &p.vector)
                .iter()
                .map(|c| c.norm())
                .collect();
            let i = dominant(&modes, &amps);
            Ok(DispersionRecord {
                k: modes[i],
                omega_re: -p.value.re / scale,
                omega_im: p.value.im / scale,
                dominant_amplitude: amps[i],
            })
        })
        .collect()
}

/// `u 2π / L`
pub fn dispersion_scale(mesh: &PeriodicMesh1D, u: f64) -> f64 {
    u * 2.0 * std::f64::consts::PI / mesh.length()
}

/// Dispersion relation of a given operator kind for constant velocity.
pub fn dispersion(
    mesh: &PeriodicMesh1D,
    kind: OperatorKind,
    u: f64,
    dt: f64,
) -> Result<Vec<DispersionRecord>> {
    let vel = VelocityModel::Constant(u);
    let op = build_operator(kind, mesh, &vel, dt, 1.0)?;
    let pairs = eig_generalized(&mass_q(mesh), &op.matrix)?;
    let mut recs = fourier_pair(mesh, &pairs, dispersion_scale(mesh, u))?;
    sort_records(&mut recs);
    Ok(recs)
}

pub fn sort_records(recs: &mut [DispersionRecord]) {
    recs.sort_by(|a, b| {
        a.k.cmp(&b.k)
            .then(a.omega_im.total_cmp(&b.omega_im))
            .then(a.omega_re.total_cmp(&b.omega_re))
    });
}

pub fn write_dispersion_csv<W: Write>(mut w: W, recs: &[DispersionRecord]) -> std::io::Result<()> {
    writeln!(w, "k,omega_re,omega_im")?;
    for r in recs {
        writeln!(w, "{},{:.15e},{:.15e}", r.k, r.omega_re, r.omega_im)?;
    }
    Ok(())
}

/// Largest upward step `ω_i(k+1) − ω_i(k)` between neighbouring records of
/// the upper half-spectrum (`k > 0`), sorted by `k` then `ω_i`. A spectral
/// gap shows up as such a step; the fold of the curve towards the Nyquist
/// end is a descent and does not count.
pub fn max_gap_jump(recs: &[DispersionRecord]) -> f64 {
    let mut upper: Vec<&DispersionRecord> = recs.iter().filter(|r| r.k > 0).collect();
    upper.sort_by(|a, b| a.k.cmp(&b.k).then(a.omega_im.total_cmp(&b.omega_im)));
    upper
        .windows(2)
        .filter(|w| w[1].k == w[0].k + 1)
        .map(|w| w[1].omega_im - w[0].omega_im)
        .fold(0.0, f64::max)
}

/// Most negative growth rate.
pub fn min_growth_rate(recs: &[DispersionRecord]) -> f64 {
    recs.iter()
        .map(|r| r.omega_re)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityScan {
    pub cfl_values: Vec<f64>,
    pub modes: Vec<i64>,
    /// `magnitudes[c][m]`: largest `|ω|` among eigenvalues paired with
    /// `modes[m]` at `cfl_values[c]`; `NaN` when no eigenvalue pairs there.
    pub magnitudes: Vec<Vec<f64>>,
    /// Every eigenvalue as `(cfl, k, |ω|)`.
    pub points: Vec<(f64, i64, f64)>,
}

/// `Δt |u| n_e p / L`
pub fn cfl_number(mesh: &PeriodicMesh1D, u: f64, dt: f64) -> f64 {
    dt * u.abs() * mesh.dim_q() as f64 / mesh.length()
}

/// `|ω|` of the centered map of `A_PG(Δt)` over a grid of time steps.
pub fn stability_scan(mesh: &PeriodicMesh1D, u: f64, dt_grid: &[f64]) -> Result<StabilityScan> {
    stability_scan_kind(mesh, OperatorKind::APg, u, dt_grid)
}

pub fn stability_scan_kind(
    mesh: &PeriodicMesh1D,
    kind: OperatorKind,
    u: f64,
    dt_grid: &[f64],
) -> Result<StabilityScan> {
    let vel = VelocityModel::Constant(u);
    let m = mass_q(mesh);
    let modes = fourier_modes(mesh.dim_q());
    let q = sample_matrix(mesh);
    let columns: Vec<Vec<(i64, f64)>> = dt_grid
        .par_iter()
        .map(|&dt| {
            let op = build_operator(kind, mesh, &vel, dt, 1.0)?;
            let pairs = amplification_pairs(&m, &op.matrix, dt)?;
            Ok(pairs
                .iter()
                .map(|p| {
                    let amps: Vec<f64> = fourier_coefficients(mesh, &q, &p.vector)
                        .iter()
                        .map(|c| c.norm())
                        .collect();
                    (modes[dominant(&modes, &amps)], p.value.norm())
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let cfl_values: Vec<f64> = dt_grid.iter().map(|&dt| cfl_number(mesh, u, dt)).collect();
    let lo = modes[0];
    let mut magnitudes = vec![vec![f64::NAN; modes.len()]; dt_grid.len()];
    let mut points = Vec::new();
    for (c, col) in columns.iter().enumerate() {
        for &(k, mag) in col {
            let slot = &mut magnitudes[c][(k - lo) as usize];
            *slot = if slot.is_nan() { mag } else { slot.max(mag) };
            points.push((cfl_values[c], k, mag));
        }
    }
    points.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
    });
    Ok(StabilityScan {
        cfl_values,
        modes,
        magnitudes,
        points,
    })
}

impl StabilityScan {
    pub fn max_magnitude(&self) -> f64 {
        self.points.iter().map(|p| p.2).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cfl,k,abs_omega")?;
        for (c, k, m) in &self.points {
            writeln!(w, "{c:.10e},{k},{m:.15e}")?;
        }
        Ok(())
    }

    /// `|ω|` against `|k|` at one CFL index, averaging `±k`, for the paired
    /// modes with `|k|` in the upper half of the range.
    pub fn upper_half_profile(&self, c: usize) -> Vec<(i64, f64)> {
        let kmax = self.modes.iter().map(|k| k.abs()).max().unwrap_or(0);
        let lo = self.modes[0];
        let mut out = Vec::new();
        for ka in 0..=kmax {
            if 2 * ka < kmax {
                continue;
            }
            let vals: Vec<f64> = [ka, -ka]
                .iter()
                .filter(|k| **k >= lo && ((**k - lo) as usize) < self.modes.len())
                .map(|k| self.magnitudes[c][(k - lo) as usize])
                .filter(|v| !v.is_nan())
                .collect();
            if !vals.is_empty() {
                out.push((ka, vals.iter().cloned().fold(0.0, f64::max)));
            }
        }
        out
    }
}

/// Plot script (matplotlib) for the dispersion and stability CSVs.
pub fn plot_script(dispersion_files: &[&str], scan_files: &[&str]) -> String {
    let mut s = String::from(
        "import numpy as np\nimport matplotlib.pyplot as plt\n\nfig, (ax_i, ax_r) = plt.subplots(1, 2, figsize=(10, 4))\n",
    );
    for f in dispersion_files {
        s.push_str(&format!(
            "d = np.genfromtxt('{f}', delimiter=',', names=True)\nax_i.plot(d['k'], d['omega_im'], '.', label='{f}')\nax_r.plot(d['k'], d['omega_re'], '.', label='{f}')\n"
        ));
    }
    s.push_str(
        "k = np.linspace(ax_i.get_xlim()[0], ax_i.get_xlim()[1], 2)\nax_i.plot(k, k, 'k-')\nax_i.set_xlabel('k'); ax_i.set_ylabel('omega_i')\nax_r.set_xlabel('k'); ax_r.set_ylabel('omega_r')\nax_i.legend()\nfig.savefig('dispersion.png', dpi=150)\n",
    );
    for f in scan_files {
        s.push_str(&format!(
            "\ns = np.genfromtxt('{f}', delimiter=',', names=True)\nfig, ax = plt.subplots()\nsc = ax.scatter(s['cfl'], s['k'], c=s['abs_omega'], s=6)\nfig.colorbar(sc, label='|omega|')\nax.set_xlabel('CFL'); ax.set_ylabel('k')\nfig.savefig('{f}.png', dpi=150)\n"
        ));
    }
    s
}

/// Plot script drawing amplification eigenvalues against the unit circle.
pub fn stability_circle_script(files: &[&str]) -> String {
    let mut s = String::from(
        "import numpy as np\nimport matplotlib.pyplot as plt\n\nfig, ax = plt.subplots(figsize=(5, 5))\nt = np.linspace(0, 2 * np.pi, 400)\nax.plot(np.cos(t), np.sin(t), 'k-')\n",
    );
    for f in files {
        s.push_str(&format!(
            "d = np.genfromtxt('{f}', delimiter=',', names=True)\nax.plot(d['re'], d['im'], '.', label='{f}')\n"
        ));
    }
    s.push_str(
        "ax.set_aspect('equal')\nax.legend()\nfig.savefig('stability_circle.png', dpi=150)\n",
    );
    s
}

pub fn write_spectrum_csv<W: Write>(mut w: W, values: &[Complex64]) -> std::io::Result<()> {
    writeln!(w, "re,im,abs")?;
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
    for z in v {
        writeln!(w, "{:.15e},{:.15e},{:.15e}", z.re, z.im, z.norm())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use std::f64::consts::PI;

    fn residual(c: &DMatrix<f64>, p: &EigenPair) -> f64 {
        let cz = c.map(|v| Complex64::new(v, 0.0));
        (&cz * &p.vector - &p.vector * p.value).norm()
    }

    #[test]
    fn trivial_spectra() {
        let mesh = build_mesh(4, 1.0, 2).unwrap();
        let m = mass_q(&mesh);
        let zero = LinearOperator::dense(DMatrix::zeros(8, 8));
        for p in eig_generalized(&m, &zero).unwrap() {
            assert_eq!(p.value, Complex64::new(0.0, 0.0));
        }
        for p in eig_generalized(&m, &m).unwrap() {
            assert!((p.value - 1.0).norm() < 1e-13);
        }
        for w in amplification_spectrum(&m, &m, 0.0).unwrap() {
            assert!((w - 1.0).norm() < 1e-13);
        }
    }

    #[test]
    fn rotation_and_defective_matrices() {
        let c = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let pairs = eig_dense(&c).unwrap();
        let mut ims: Vec<f64> = pairs.iter().map(|p| p.value.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + 2.0).abs() < 1e-14 && (ims[1] - 2.0).abs() < 1e-14);
        for p in &pairs {
            assert!(residual(&c, p) < 1e-14);
        }
        // Jordan block: the single eigenvector is still recovered
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        for p in eig_dense(&j).unwrap() {
            assert!(residual(&j, &p) < 1e-7);
        }
    }

    #[test]
    fn random_matrix_residuals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let n = 40;
        let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let pairs = eig_dense(&c).unwrap();
        assert_eq!(pairs.len(), n);
        let trace: f64 = pairs.iter().map(|p| p.value.re).sum();
        assert!((trace - c.trace()).abs() < 1e-10);
        for p in &pairs {
            assert!(residual(&c, p) < 1e-12 * c.norm());
        }
    }

    #[test]
    fn modes_and_samples() {
        assert_eq!(fourier_modes(5), vec![-2, -1, 0, 1, 2]);
        assert_eq!(fourier_modes(4), vec![-2, -1, 0, 1]);
        let mesh = build_mesh(5, 2.0, 3).unwrap();
        let xs = sample_points(&mesh);
        assert_eq!(xs.len(), 15);
        assert!((xs[0] - 1.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_mode_pairs_with_its_wavenumber() {
        let mesh = build_mesh(10, 1.0, 3).unwrap();
        let q = sample_matrix(&mesh);
        // coefficients whose sampled values are exactly cos(6πx)
        let xs = sample_points(&mesh);
        let target = DVector::from_iterator(xs.len(), xs.iter().map(|x| (6.0 * PI * x).cos()));
        let coeffs = q.clone().lu().solve(&target).unwrap();
        let v = coeffs.map(|c| Complex64::new(c, 0.0));
        let pairs = [EigenPair {
            value: Complex64::new(0.0, 1.0),
            vector: v,
        }];
        let rec = fourier_pair(&mesh, &pairs, 1.0).unwrap();
        assert_eq!(rec[0].k, 3);
        assert!((rec[0].dominant_amplitude - 0.5).abs() < 1e-12);
        let ones = DVector::from_element(30, Complex64::new(1.0, 0.0));
        let rec = fourier_pair(
            &mesh,
            &[EigenPair {
                value: Complex64::new(0.0, 0.0),
                vector: ones,
            }],
            1.0,
        )
        .unwrap();
        assert_eq!(rec[0].k, 0);
    }

    #[test]
    fn a_spectrum_is_imaginary_and_conjugate_closed() {
        let mesh = build_mesh(40, 1.0, 3).unwrap();
        let vel = VelocityModel::Constant(0.4);
        let a = crate::operators::build_a(&mesh, &vel).unwrap();
        let pairs = eig_generalized(&mass_q(&mesh), &a.matrix).unwrap();
        let max_im = pairs.iter().map(|p| p.value.im.abs()).fold(0.0, f64::max);
        let max_re = pairs.iter().map(|p| p.value.re.abs()).fold(0.0, f64::max);
        assert!(max_re <= 1e-10 * max_im, "{max_re} vs {max_im}");
        for p in &pairs {
            let conj = p.value.conj();
            assert!(pairs
                .iter()
                .any(|o| (o.value - conj).norm() <= 1e-10 * max_im));
        }
    }

    #[test]
    fn dispersion_low_modes_follow_exact_relation() {
        let mesh = build_mesh(40, 1.0, 3).unwrap();
        let recs = dispersion(&mesh, OperatorKind::A, 0.4, 0.005).unwrap();
        assert_eq!(recs.len(), 120);
        for r in recs.iter().filter(|r| r.k.abs() <= 10) {
            assert!(
                (r.omega_im - r.k as f64).abs() < 1e-3 * (1.0 + r.k.abs() as f64),
                "{r:?}"
            );
        }
        // symmetry (k, ω) → (−k, ω̄) for the modes away from the Nyquist end
        for r in recs.iter().filter(|r| r.k.abs() < 50) {
            assert!(recs.iter().any(|o| o.k == -r.k
                && (o.omega_im + r.omega_im).abs() < 1e-8
                && (o.omega_re - r.omega_re).abs() < 1e-8));
        }
        let mut buf = Vec::new();
        write_dispersion_csv(&mut buf, &recs).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("k,omega_re,omega_im\n"));
    }

    #[test]
    fn pg_dispersion_is_dissipative() {
        let mesh = build_mesh(40, 1.0, 3).unwrap();
        let recs = dispersion(&mesh, OperatorKind::APg, 0.4, 0.005).unwrap();
        let rho = recs
            .iter()
            .map(|r| r.omega_re.hypot(r.omega_im))
            .fold(0.0, f64::max);
        assert!(recs.iter().all(|r| r.omega_re <= 1e-10 * rho));
        assert!(min_growth_rate(&recs) < 0.0);
    }

    #[test]
    fn amplification_of_a_on_unit_circle() {
        let mesh = build_mesh(20, 1.0, 3).unwrap();
        let vel = VelocityModel::Constant(0.4);
        let a = crate::operators::build_a(&mesh, &vel).unwrap();
        for w in amplification_spectrum(&mass_q(&mesh), &a.matrix, 0.005).unwrap() {
            assert!((w.norm() - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn scan_small_cfl_limit() {
        let mesh = build_mesh(10, 1.0, 3).unwrap();
        let scan = stability_scan(&mesh, 0.4, &[1e-8, 0.01]).unwrap();
        assert_eq!(scan.magnitudes.len(), 2);
        assert!(scan
            .points
            .iter()
            .filter(|p| p.0 < 1e-6)
            .all(|p| (p.2 - 1.0).abs() < 1e-6));
        assert!(scan.max_magnitude() <= 1.0 + 1e-12);
        assert_eq!(scan.points.len(), 60);
    }
}
