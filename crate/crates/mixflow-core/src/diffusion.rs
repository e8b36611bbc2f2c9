//! Pointwise matrix machinery of the cross-diffusion model: the flux matrix C,
//! the reduced matrix `D_kl = C_kl / (rho Y_k)`, the relaxation matrix R and
//! the diffusion matrix B of the symmetrized species subsystem, coercivity
//! constants, and the diffusion fluxes in their three equivalent forms.

use crate::linalg::{LinalgError, Mat};
use crate::mixture::{
    relaxation_matrix, thermo_point, MixtureError, PrimitiveState, SpeciesParams,
};
use crate::scalar::Real;
use serde::Serialize;
use thiserror::Error;

/// Mass fractions must sum to one within this tolerance.
pub const FRACTION_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("mass fractions sum deviates from 1 by {0:e}")]
    InvalidFractions(f64),
    #[error("operation requires the exemplary flux matrix")]
    NotExemplary,
    #[error("tabulated flux matrix rejected: {0}")]
    TableRejected(String),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// How the flux matrix is produced as a function of the mass fractions.
#[derive(Debug, Clone)]
pub enum CModel<S> {
    /// Diagonal `Z_k = sum_{i != k} Y_i`, off-diagonal `-Y_k` in row k.
    Exemplary,
    /// User-supplied table of (Y, C) samples, validated on construction.
    Table(CTable<S>),
}

impl<S: Real> CModel<S> {
    pub fn is_exemplary(&self) -> bool {
        matches!(self, CModel::Exemplary)
    }

    /// Evaluate the flux matrix at the given mass fractions.
    pub fn eval(&self, y: &[S]) -> Result<FluxMatrixC<S>, DiffusionError> {
        match self {
            CModel::Exemplary => build_c_exemplary(y),
            CModel::Table(t) => Ok(FluxMatrixC {
                entries: t.nearest(y).clone(),
                kind: CKind::Table,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CKind {
    Exemplary,
    Table,
}

/// A realized flux matrix at one set of mass fractions.
#[derive(Debug, Clone)]
pub struct FluxMatrixC<S> {
    pub entries: Mat<S>,
    pub kind: CKind,
}

/// Tabulated flux matrix: nearest-neighbor lookup in mass-fraction space.
/// Every sample must satisfy the structural identities at [`FRACTION_TOL`].
#[derive(Debug, Clone)]
pub struct CTable<S> {
    samples: Vec<(Vec<S>, Mat<S>)>,
}

impl<S: Real> CTable<S> {
    pub fn new(samples: Vec<(Vec<S>, Mat<S>)>) -> Result<Self, DiffusionError> {
        if samples.is_empty() {
            return Err(DiffusionError::TableRejected("table is empty".into()));
        }
        for (idx, (y, c)) in samples.iter().enumerate() {
            if y.len() != c.dim() {
                return Err(DiffusionError::TableRejected(format!(
                    "sample {idx}: Y length {} vs matrix dim {}",
                    y.len(),
                    c.dim()
                )));
            }
            let report = validate_c(c, y);
            if !report.passes(FRACTION_TOL) {
                return Err(DiffusionError::TableRejected(format!(
                    "sample {idx} violates the flux-matrix identities: {report:?}"
                )));
            }
        }
        Ok(Self { samples })
    }

    fn nearest(&self, y: &[S]) -> &Mat<S> {
        let mut best = 0usize;
        let mut best_d = S::infinity();
        for (i, (sy, _)) in self.samples.iter().enumerate() {
            let d: S = sy
                .iter()
                .zip(y)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        &self.samples[best].1
    }
}

/// Build the exemplary flux matrix at the given mass fractions.
pub fn build_c_exemplary<S: Real>(y: &[S]) -> Result<FluxMatrixC<S>, DiffusionError> {
    let n = y.len();
    let sum: S = y.iter().copied().sum();
    let dev = (sum - S::one()).abs();
    let tol = S::of(FRACTION_TOL).max(S::epsilon() * S::of(32.0));
    if dev > tol {
        return Err(DiffusionError::InvalidFractions(dev.f64()));
    }
    let entries = Mat::from_fn(n, |k, l| if k == l { sum - y[k] } else { -y[k] });
    Ok(FluxMatrixC {
        entries,
        kind: CKind::Exemplary,
    })
}

/// Violations of the structural identities of a flux matrix at given Y.
#[derive(Debug, Clone, Serialize)]
pub struct CValidationReport {
    /// max |(C Yd - Yd C^T)_kl| with Yd = diag(Y)
    pub symmetry_violation: f64,
    /// max_k |(C Y)_k|
    pub kernel_violation: f64,
    /// max_l |sum_k C_kl|
    pub column_sum_violation: f64,
    /// numerical dimension of the nullspace (should be exactly 1)
    pub kernel_dimension: usize,
}

impl CValidationReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.symmetry_violation <= tol
            && self.kernel_violation <= tol
            && self.column_sum_violation <= tol
            && self.kernel_dimension == 1
    }

    pub fn max_violation(&self) -> f64 {
        self.symmetry_violation
            .max(self.kernel_violation)
            .max(self.column_sum_violation)
    }
}

/// Check the three structural identities and the kernel dimension of C.
pub fn validate_c<S: Real>(c: &Mat<S>, y: &[S]) -> CValidationReport {
    let n = c.dim();
    let ydiag = Mat::from_fn(n, |i, j| if i == j { y[i] } else { S::zero() });
    let sym = c.matmul(&ydiag).sub(&ydiag.matmul(&c.transpose()));
    let cy = c.apply(y);
    let kernel_violation = cy.iter().fold(S::zero(), |a, &v| a.max(v.abs()));
    let mut column_sum_violation = S::zero();
    for l in 0..n {
        let s: S = (0..n).map(|k| c[(k, l)]).sum();
        column_sum_violation = column_sum_violation.max(s.abs());
    }
    // rank of C from the eigenvalues of C^T C
    let gram = c.transpose().matmul(c);
    let evs = gram.sym_eigenvalues().unwrap_or_else(|_| vec![S::zero(); n]);
    let scale = evs.last().copied().unwrap_or(S::zero());
    let rank_tol = (S::of(FRACTION_TOL) * S::of(FRACTION_TOL))
        .max(scale * S::epsilon() * S::from_usize(n * n).unwrap());
    let kernel_dimension = evs.iter().filter(|&&l| l <= rank_tol).count();
    CValidationReport {
        symmetry_violation: sym.max_abs().f64(),
        kernel_violation: kernel_violation.f64(),
        column_sum_violation: column_sum_violation.f64(),
        kernel_dimension,
    }
}

/// Reduced matrix `D_kl = C_kl / (rho Y_k)`.
pub fn d_matrix<S: Real>(c: &Mat<S>, y: &[S], rho: S) -> Mat<S> {
    Mat::from_fn(c.dim(), |k, l| c[(k, l)] / (rho * y[k]))
}

/// Diffusion matrix of the symmetrized species subsystem,
/// `B_kl = rho_{k+1} rho_{l+1} D_{k+1,l+1} / p`, size (n-1)x(n-1).
pub fn diffusion_matrix_b<S: Real>(d: &Mat<S>, rhos: &[S], p: S) -> Mat<S> {
    Mat::from_fn(d.dim() - 1, |k, l| {
        rhos[k + 1] * rhos[l + 1] * d[(k + 1, l + 1)] / p
    })
}

/// Pressure-gradient coupling coefficients
/// `A_k = rho_{k+1} - m_{k+1} rho_{k+1} rho / Sigma_rho`, so that
/// `grad p = (rho/Sigma_rho) grad rho + sum_k A_k grad h_k`.
pub fn pressure_coupling<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> Vec<S> {
    let rho: S = rhos.iter().copied().sum();
    let sigma: S = rhos
        .iter()
        .zip(params.molar_masses())
        .map(|(&r, &m)| r * m)
        .sum();
    (1..params.n_species())
        .map(|k| rhos[k] - params.m(k) * rhos[k] * rho / sigma)
        .collect()
}

/// All pointwise matrices of the model with spectral diagnostics.
#[derive(Debug, Clone)]
pub struct MatrixBundle<S> {
    pub c: FluxMatrixC<S>,
    pub d: Mat<S>,
    pub r: Mat<S>,
    pub b: Mat<S>,
    pub eigmin_r: S,
    pub eigmin_b: S,
    pub det_b: S,
}

/// Assemble C, D, R, B at one admissible point and run the symmetric
/// eigen-solves and the LU determinant.
pub fn build_bundle<S: Real>(
    rhos: &[S],
    params: &SpeciesParams<S>,
    model: &CModel<S>,
) -> Result<MatrixBundle<S>, DiffusionError> {
    for (k, &r) in rhos.iter().enumerate() {
        if r <= S::zero() {
            return Err(MixtureError::NonPositiveDensity { species: k, index: 0 }.into());
        }
    }
    let t = thermo_point(rhos, params);
    let c = model.eval(&t.y)?;
    let d = d_matrix(&c.entries, &t.y, rhos.iter().copied().sum());
    let r = relaxation_matrix(rhos, params);
    let b = diffusion_matrix_b(&d, rhos, t.p);
    let eigmin_r = r.sym_eigmin()?;
    let eigmin_b = b.sym_eigmin()?;
    let det_b = b.det_lu();
    Ok(MatrixBundle {
        c,
        d,
        r,
        b,
        eigmin_r,
        eigmin_b,
        det_b,
    })
}

/// Closed-form determinant of B for the exemplary flux matrix:
/// `det B = (rho/p)^{n-1} prod_k Y_k (sum_k Y_k)^{n-1}`.
pub fn det_b_closed_form<S: Real>(
    rhos: &[S],
    params: &SpeciesParams<S>,
    model: &CModel<S>,
) -> Result<S, DiffusionError> {
    if !model.is_exemplary() {
        return Err(DiffusionError::NotExemplary);
    }
    let t = thermo_point(rhos, params);
    let rho: S = rhos.iter().copied().sum();
    let n = params.n_species();
    let ysum: S = t.y.iter().copied().sum();
    let yprod: S = t.y.iter().copied().product();
    Ok((rho / t.p).powi(n as i32 - 1) * yprod * ysum.powi(n as i32 - 1))
}

/// Coercivity constants of R and B at one point.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivityConstants {
    /// Analytic lower bound `(m_1 rho_1 / Sigma_rho) min_{k != 1} m_k rho_k`.
    pub c1_analytic: f64,
    /// Smallest eigenvalue of R.
    pub c1_numeric: f64,
    /// Smallest eigenvalue of B.
    pub c2_numeric: f64,
}

pub fn coercivity_constants<S: Real>(
    bundle: &MatrixBundle<S>,
    rhos: &[S],
    params: &SpeciesParams<S>,
) -> CoercivityConstants {
    let sigma: S = rhos
        .iter()
        .zip(params.molar_masses())
        .map(|(&r, &m)| r * m)
        .sum();
    let min_tail = (1..params.n_species())
        .map(|k| params.m(k) * rhos[k])
        .fold(S::infinity(), S::min);
    let c1 = params.m(0) * rhos[0] / sigma * min_tail;
    CoercivityConstants {
        c1_analytic: c1.f64(),
        c1_numeric: bundle.eigmin_r.f64(),
        c2_numeric: bundle.eigmin_b.f64(),
    }
}

// --- diffusion fluxes ---

/// Flux from partial-pressure gradients: `F_k = -(1/p) sum_l C_kl grad p_l`.
pub fn flux_point<S: Real>(c: &Mat<S>, p: S, grad_p_l: &[S]) -> Vec<S> {
    let n = c.dim();
    (0..n)
        .map(|k| -(0..n).map(|l| c[(k, l)] * grad_p_l[l]).sum::<S>() / p)
        .collect()
}

/// Reduced flux for the exemplary matrix: `F_k = -(1/p)(grad p_k - Y_k grad p)`.
pub fn flux_reduced_point<S: Real>(y: &[S], p: S, grad_p_l: &[S]) -> Vec<S> {
    let grad_p: S = grad_p_l.iter().copied().sum();
    y.iter()
        .zip(grad_p_l)
        .map(|(&yk, &gpk)| -(gpk - yk * grad_p) / p)
        .collect()
}

/// Entropic-variable flux: `F_k = -(m_bar/rho) sum_{l>=2} rho_k rho_l D_kl grad h_{l-1}`.
pub fn flux_entropic_point<S: Real>(
    d: &Mat<S>,
    rhos: &[S],
    m_bar: S,
    grad_h: &[S],
) -> Vec<S> {
    let n = d.dim();
    let rho: S = rhos.iter().copied().sum();
    (0..n)
        .map(|k| {
            -(1..n)
                .map(|l| rhos[k] * rhos[l] * d[(k, l)] * grad_h[l - 1])
                .sum::<S>()
                * m_bar
                / rho
        })
        .collect()
}

/// Grid-wise diffusion fluxes from supplied partial-pressure gradient fields;
/// `grad_p[l][i]` is the gradient of partial pressure `l` at node `i`.
/// Returns `flux[k][i]`.
pub fn flux<S: Real>(
    state: &PrimitiveState<S>,
    grad_p: &[Vec<S>],
    params: &SpeciesParams<S>,
    model: &CModel<S>,
) -> Result<Vec<Vec<S>>, DiffusionError> {
    let n = params.n_species();
    let nn = state.n_nodes();
    if grad_p.len() != n || grad_p.iter().any(|f| f.len() != nn) {
        return Err(MixtureError::ShapeMismatch("gradient fields".into()).into());
    }
    let mut out = vec![vec![S::zero(); nn]; n];
    for i in 0..nn {
        let rhos = state.point(i);
        for (k, &r) in rhos.iter().enumerate() {
            if r <= S::zero() {
                return Err(MixtureError::NonPositiveDensity { species: k, index: i }.into());
            }
        }
        let t = thermo_point(&rhos, params);
        let c = model.eval(&t.y)?;
        let gp: Vec<S> = (0..n).map(|l| grad_p[l][i]).collect();
        let f = flux_point(&c.entries, t.p, &gp);
        for k in 0..n {
            out[k][i] = f[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_admissible(rng: &mut StdRng) -> (SpeciesParams<f64>, Vec<f64>) {
        let n = *[2usize, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
        let rhos: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        (SpeciesParams::new(m, 1.0, 0.0).unwrap(), rhos)
    }

    #[test]
    fn exemplary_c_hand_cases() {
        let c = build_c_exemplary(&[0.5, 0.5]).unwrap();
        assert_relative_eq!(c.entries[(0, 0)], 0.5);
        assert_relative_eq!(c.entries[(0, 1)], -0.5);
        assert_relative_eq!(c.entries[(1, 0)], -0.5);
        assert_relative_eq!(c.entries[(1, 1)], 0.5);
        let cy = c.entries.apply(&[0.5, 0.5]);
        assert!(cy.iter().all(|v: &f64| v.abs() < 1e-15));

        let y3 = [1.0 / 3.0; 3];
        let c3 = build_c_exemplary(&y3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
                assert_relative_eq!(c3.entries[(i, j)], expect, epsilon = 1e-15);
            }
            let row_sum: f64 = (0..3).map(|j| c3.entries[(i, j)]).sum();
            assert_relative_eq!(row_sum, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn exemplary_c_rejects_bad_fractions() {
        match build_c_exemplary(&[0.6, 0.5]) {
            Err(DiffusionError::InvalidFractions(d)) => assert!((d - 0.1).abs() < 1e-12),
            other => panic!("expected InvalidFractions, got {other:?}"),
        }
    }

    #[test]
    fn validate_c_reports() {
        let y = [0.2, 0.3, 0.5];
        let c = build_c_exemplary(&y).unwrap();
        let rep = validate_c(&c.entries, &y);
        assert!(rep.max_violation() < 1e-14);
        assert_eq!(rep.kernel_dimension, 1);
        assert!(rep.passes(1e-10));

        // a perturbed entry shows up at its own magnitude
        let mut bad = c.entries.clone();
        bad[(0, 1)] += 1e-3;
        let rep = validate_c(&bad, &y);
        assert!(rep.max_violation() > 2e-4 && rep.max_violation() < 5e-3);
        assert!(!rep.passes(1e-8));

        // the zero matrix kills every identity except the kernel one; the
        // kernel-dimension check is what rejects it
        let zero = Mat::zeros(3);
        let rep = validate_c(&zero, &y);
        assert!(rep.kernel_violation < 1e-15);
        assert_eq!(rep.kernel_dimension, 3);
        assert!(!rep.passes(1e-8));
    }

    #[test]
    fn bundle_two_species_hand_case() {
        let params = SpeciesParams::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let model = CModel::Exemplary;
        let bundle = build_bundle(&[1.0, 1.0], &params, &model).unwrap();
        assert_relative_eq!(bundle.r[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(bundle.b[(0, 0)], 0.25, epsilon = 1e-15);
        assert_relative_eq!(bundle.det_b, 0.25, epsilon = 1e-15);
        let closed = det_b_closed_form(&[1.0, 1.0], &params, &model).unwrap();
        assert_relative_eq!(closed, 0.25, epsilon = 1e-15);

        let cc = coercivity_constants(&bundle, &[1.0, 1.0], &params);
        assert_relative_eq!(cc.c1_analytic, 0.5, epsilon = 1e-15);
        assert_relative_eq!(cc.c1_numeric, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn det_b_three_species_uniform() {
        let params = SpeciesParams::new(vec![1.0, 1.0, 1.0], 1.0, 0.0).unwrap();
        let model = CModel::Exemplary;
        let closed = det_b_closed_form(&[1.0, 1.0, 1.0], &params, &model).unwrap();
        assert_relative_eq!(closed, 1.0 / 27.0, epsilon = 1e-14);
        let bundle = build_bundle(&[1.0, 1.0, 1.0], &params, &model).unwrap();
        assert_relative_eq!(bundle.det_b, 1.0 / 27.0, epsilon = 1e-14);
    }

    #[test]
    fn det_b_vanishes_toward_scarce_species() {
        let params = SpeciesParams::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let model = CModel::Exemplary;
        let mut prev = f64::INFINITY;
        for i in 1..=40 {
            let y1 = 0.5 * (1.0 - i as f64 / 41.0);
            let rhos = [y1, 1.0 - y1];
            let det = det_b_closed_form(&rhos, &params, &model).unwrap();
            let bundle = build_bundle(&rhos, &params, &model).unwrap();
            assert_relative_eq!(det, bundle.det_b, max_relative = 1e-12);
            assert!(det >= 0.0);
            assert!(det < prev, "det should shrink toward the scarce end");
            prev = det;
        }
    }

    #[test]
    fn det_b_requires_exemplary() {
        let params = SpeciesParams::new(vec![1.0, 2.0], 1.0, 0.0).unwrap();
        let y = [0.5, 0.5];
        let c = build_c_exemplary(&y).unwrap();
        let table = CTable::new(vec![(y.to_vec(), c.entries)]).unwrap();
        let model = CModel::Table(table);
        assert!(matches!(
            det_b_closed_form(&[1.0, 1.0], &params, &model),
            Err(DiffusionError::NotExemplary)
        ));
    }

    #[test]
    fn table_rejects_invalid_samples() {
        let mut bad = Mat::zeros(2);
        bad[(0, 0)] = 1.0;
        assert!(CTable::new(vec![(vec![0.5, 0.5], bad)]).is_err());
    }

    #[test]
    fn randomized_matrix_properties() {
        let mut rng = StdRng::seed_from_u64(23);
        let model = CModel::Exemplary;
        for _ in 0..800 {
            let (params, rhos) = random_admissible(&mut rng);
            let n = params.n_species();
            let t = thermo_point(&rhos, &params);
            let bundle = build_bundle(&rhos, &params, &model).unwrap();

            // C identities
            let rep = validate_c(&bundle.c.entries, &t.y);
            assert!(rep.max_violation() < 1e-12);
            assert_eq!(rep.kernel_dimension, 1);

            // D: symmetric, PSD, kernel = lin{Y} exactly
            assert!(bundle.d.asymmetry() < 1e-12);
            let evs = bundle.d.sym_eigenvalues().unwrap();
            assert!(evs[0] > -1e-10, "D eigenvalue {}", evs[0]);
            assert!(evs[1] > 1e-10, "D second eigenvalue {} (kernel too big)", evs[1]);
            let dy = bundle.d.apply(&t.y);
            assert!(dy.iter().all(|v| v.abs() < 1e-12));

            // coercivity of R against the analytic bound; positivity of B
            let cc = coercivity_constants(&bundle, &rhos, &params);
            assert!(
                cc.c1_numeric >= cc.c1_analytic - 1e-10,
                "lambda_min(R) = {} below analytic bound {}",
                cc.c1_numeric,
                cc.c1_analytic
            );
            assert!(cc.c2_numeric > 0.0);

            // determinant identity
            let closed = det_b_closed_form(&rhos, &params, &model).unwrap();
            assert_relative_eq!(closed, bundle.det_b, max_relative = 1e-10);

            // B rewritten via (rho/p) Y_{l+1} C_{k+1,l+1}
            let rho: f64 = rhos.iter().sum();
            for k in 0..n - 1 {
                for l in 0..n - 1 {
                    let alt = rho / t.p * t.y[l + 1] * bundle.c.entries[(k + 1, l + 1)];
                    assert_relative_eq!(bundle.b[(k, l)], alt, epsilon = 1e-13, max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn flux_triple_formula_equivalence() {
        // rho_1(x) = 1 + 0.1 sin(2 pi x), rho_2 = 1, equal masses
        let params = SpeciesParams::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        for i in 0..50 {
            let x = i as f64 / 49.0;
            let rhos = [1.0 + 0.1 * (two_pi * x).sin(), 1.0];
            let d_rho = [0.1 * two_pi * (two_pi * x).cos(), 0.0];
            let grad_p: Vec<f64> = (0..2).map(|l| d_rho[l] / params.m(l)).collect();
            let grad_h = [d_rho[1] / (params.m(1) * rhos[1]) - d_rho[0] / (params.m(0) * rhos[0])];

            let t = thermo_point(&rhos, &params);
            let c = build_c_exemplary(&t.y).unwrap();
            let d = d_matrix(&c.entries, &t.y, rhos.iter().sum());

            let f_a = flux_point(&c.entries, t.p, &grad_p);
            let f_b = flux_reduced_point(&t.y, t.p, &grad_p);
            let f_c = flux_entropic_point(&d, &rhos, t.m_bar, &grad_h);
            for k in 0..2 {
                assert_relative_eq!(f_a[k], f_b[k], epsilon = 1e-12);
                assert_relative_eq!(f_a[k], f_c[k], epsilon = 1e-12);
            }
            // forced by sum_k F_k = 0
            assert_relative_eq!(f_a[0], -f_a[1], epsilon = 1e-13);
        }
    }

    #[test]
    fn flux_vanishes_on_constant_state() {
        let params = SpeciesParams::new(vec![1.0, 2.0, 3.0], 1.0, 0.0).unwrap();
        let nn = 7;
        let state = PrimitiveState::new(
            vec![vec![1.0; nn], vec![0.5; nn], vec![2.0; nn]],
            vec![0.0; nn],
        )
        .unwrap();
        let grad_p = vec![vec![0.0; nn]; 3];
        let f = flux(&state, &grad_p, &params, &CModel::Exemplary).unwrap();
        assert!(f.iter().flatten().all(|v: &f64| v.abs() == 0.0));
    }

    #[test]
    fn flux_sums_to_zero_randomized() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..300 {
            let (params, rhos) = random_admissible(&mut rng);
            let n = params.n_species();
            let t = thermo_point(&rhos, &params);
            let c = build_c_exemplary(&t.y).unwrap();
            let gp: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let f = flux_point(&c.entries, t.p, &gp);
            let total: f64 = f.iter().sum();
            assert!(total.abs() < 1e-12, "sum of fluxes {total}");
        }
    }

    #[test]
    fn pressure_gradient_decomposition() {
        // grad p = (rho/Sigma) grad rho + sum_k A_k grad h_k with
        // finite-difference gradients, second order in h
        use crate::grid::Grid1d;
        use crate::mixture::psi_forward;

        let params = SpeciesParams::new(vec![1.0, 2.0, 0.7], 1.0, 0.0).unwrap();
        let mut errs = Vec::new();
        for n_grid in [32usize, 64, 128] {
            let g = Grid1d::<f64>::new(n_grid);
            let two_pi = 2.0 * std::f64::consts::PI;
            let rho_fields: Vec<Vec<f64>> = (0..3)
                .map(|k| {
                    g.sample(|x| 1.0 + 0.2 * ((k + 1) as f64 * two_pi * x).sin() + 0.1 * k as f64)
                })
                .collect();
            let state = PrimitiveState::new(rho_fields, g.zeros()).unwrap();
            let normal = psi_forward(&state, &params).unwrap();

            let p_field: Vec<f64> = (0..g.len())
                .map(|i| thermo_point(&state.point(i), &params).p)
                .collect();
            let dp = g.deriv(&p_field);
            let drho = g.deriv(&normal.rho);
            let dh: Vec<Vec<f64>> = normal.h.iter().map(|f| g.deriv(f)).collect();

            let mut worst = 0.0f64;
            for i in 0..g.len() {
                let rhos = state.point(i);
                let t = thermo_point(&rhos, &params);
                let a = pressure_coupling(&rhos, &params);
                let rho: f64 = rhos.iter().sum();
                let mut rec = rho / t.sigma_rho * drho[i];
                for (k, ak) in a.iter().enumerate() {
                    rec += ak * dh[k][i];
                }
                worst = worst.max((rec - dp[i]).abs());
            }
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8, "decomposition order {order}");
        }
    }
}
