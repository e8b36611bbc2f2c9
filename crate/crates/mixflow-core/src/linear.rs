//! The linearized system with coefficients frozen at the initial state: its
//! right-hand sides assembled from a Lagrangian iterate, and an implicit
//! theta-scheme solver for the coupled (velocity, entropic-variables) block
//! with the density perturbation advanced pointwise.
//!
//! Discretization: second-order central differences in space on the
//! node-centered grid, a vertex-centered conservative flux stencil for the
//! species diffusion block (face matrices by arithmetic average), and the
//! [`Grid1d::div`] operator for every velocity divergence so that the
//! pressure/divergence couplings are exactly skew-adjoint in the trapezoidal
//! inner product. The density update is substituted into the momentum
//! equation, which keeps the step unconditionally stable: with zero data the
//! quadratic form `||sqrt(rho0) v||^2 + <R0 theta, theta> + ||sqrt(gamma1/rho0) sigma||^2`
//! is nonincreasing.
//!
//! The right-hand sides are the exact linearization defect of the transformed
//! system: inserting the true nonlinear solution makes the linear system an
//! identity. Each term carries a perturbation, a gradient of the initial
//! data, or a flow-map correction factor, and the termwise breakdown is
//! exposed for the nullity tests.

use crate::diffusion::{
    diffusion_matrix_b, d_matrix, pressure_coupling, CModel, DiffusionError,
};
use crate::grid::Grid1d;
use crate::lagrangian::{assemble_remainders, FlowMapState, LagrangianError, RemainderSet};
use crate::linalg::{Banded, BandedLu, LinalgError, Mat};
use crate::mixture::{
    psi_inverse_point, psi_point, thermo_point, MixtureError, PrimitiveState, SpeciesParams,
};
use crate::norms::{NormIndices, TrajectoryNorms};
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("initial species {species} leaves [{a1}, {a2}] at node {index} (value {value})")]
    BoundsViolated {
        species: usize,
        index: usize,
        value: f64,
        a1: f64,
        a2: f64,
    },
    #[error("coupled implicit system is singular: {0}")]
    SingularSystem(LinalgError),
    #[error("frozen diffusion block is not SPD at face {0}")]
    FaceNotSpd(usize),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

/// Coefficients of the linearized system, frozen at the initial state.
#[derive(Debug, Clone)]
pub struct FrozenCoefficients<S> {
    pub rho0_k: Vec<Vec<S>>,
    pub rho0: Vec<S>,
    pub u0: Vec<S>,
    pub h0: Vec<Vec<S>>,
    pub sigma_rho0: Vec<S>,
    pub p0: Vec<S>,
    pub gamma1: Vec<S>,
    /// `gamma2[k][i] = rho0_{k+1} - m_{k+1} rho0_{k+1} rho0 / Sigma_rho0`.
    pub gamma2: Vec<Vec<S>>,
    pub r0: Vec<Mat<S>>,
    pub b0: Vec<Mat<S>>,
    /// Grid minimum of the smallest eigenvalue of R0 / B0.
    pub coercivity_r: S,
    pub coercivity_b: S,
}

impl<S: Real> FrozenCoefficients<S> {
    pub fn n_species(&self) -> usize {
        self.rho0_k.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.rho0.len()
    }
}

/// Freeze the linearization coefficients at an initial state whose species
/// densities must lie in `[a1, a2]`.
pub fn freeze_coefficients<S: Real>(
    initial: &PrimitiveState<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    a1: S,
    a2: S,
) -> Result<FrozenCoefficients<S>, LinearError> {
    let n = params.n_species();
    let nn = initial.n_nodes();
    for (k, field) in initial.rho.iter().enumerate() {
        for (i, &v) in field.iter().enumerate() {
            if v <= S::zero() {
                return Err(MixtureError::NonPositiveDensity { species: k, index: i }.into());
            }
            if v < a1 || v > a2 {
                return Err(LinearError::BoundsViolated {
                    species: k,
                    index: i,
                    value: v.f64(),
                    a1: a1.f64(),
                    a2: a2.f64(),
                });
            }
        }
    }

    let mut rho0 = Vec::with_capacity(nn);
    let mut h0 = vec![Vec::with_capacity(nn); n - 1];
    let mut sigma_rho0 = Vec::with_capacity(nn);
    let mut p0 = Vec::with_capacity(nn);
    let mut gamma1 = Vec::with_capacity(nn);
    let mut gamma2 = vec![Vec::with_capacity(nn); n - 1];
    let mut r0 = Vec::with_capacity(nn);
    let mut b0 = Vec::with_capacity(nn);
    let mut coercivity_r = S::infinity();
    let mut coercivity_b = S::infinity();

    for i in 0..nn {
        let rhos = initial.point(i);
        let (rho, h) = psi_point(&rhos, params);
        let t = thermo_point(&rhos, params);
        rho0.push(rho);
        for k in 0..n - 1 {
            h0[k].push(h[k]);
        }
        sigma_rho0.push(t.sigma_rho);
        p0.push(t.p);
        gamma1.push(rho / t.sigma_rho);
        for (k, a) in pressure_coupling(&rhos, params).into_iter().enumerate() {
            gamma2[k].push(a);
        }
        let r = crate::mixture::relaxation_matrix(&rhos, params);
        let c = model.eval(&t.y)?;
        let d = d_matrix(&c.entries, &t.y, rho);
        let b = diffusion_matrix_b(&d, &rhos, t.p);
        coercivity_r = coercivity_r.min(r.sym_eigmin().map_err(LinearError::SingularSystem)?);
        coercivity_b = coercivity_b.min(b.sym_eigmin().map_err(LinearError::SingularSystem)?);
        r0.push(r);
        b0.push(b);
    }

    Ok(FrozenCoefficients {
        rho0_k: initial.rho.clone(),
        rho0,
        u0: initial.u.clone(),
        h0,
        sigma_rho0,
        p0,
        gamma1,
        gamma2,
        r0,
        b0,
        coercivity_r,
        coercivity_b,
    })
}

/// Right-hand side data of the linearized system at one time level.
/// `f4` carries the boundary data `(left, right)` per entropic variable; its
/// meaning (flux or normal derivative) is set by [`BoundaryFluxForm`].
#[derive(Debug, Clone)]
pub struct RhsBundle<S> {
    pub f1: Vec<S>,
    /// Spatial gradient of `f1` (H1-compatible storage for the data norms).
    pub f1_grad: Vec<S>,
    pub f2: Vec<S>,
    pub f3: Vec<Vec<S>>,
    pub f4: Vec<(S, S)>,
}

impl<S: Real> RhsBundle<S> {
    pub fn zero(n_species: usize, n_nodes: usize) -> Self {
        Self {
            f1: vec![S::zero(); n_nodes],
            f1_grad: vec![S::zero(); n_nodes],
            f2: vec![S::zero(); n_nodes],
            f3: vec![vec![S::zero(); n_nodes]; n_species - 1],
            f4: vec![(S::zero(), S::zero()); n_species - 1],
        }
    }

    /// Max-norm over every component, a cheap "is this zero" diagnostic.
    pub fn max_abs(&self) -> S {
        let mut m = S::zero();
        for v in self.f1.iter().chain(self.f2.iter()) {
            m = m.max(v.abs());
        }
        for f in &self.f3 {
            for v in f {
                m = m.max(v.abs());
            }
        }
        for (l, r) in &self.f4 {
            m = m.max(l.abs()).max(r.abs());
        }
        m
    }
}

/// One time level of an iterate, with its time-derivative estimates.
pub struct IterateSlice<'a, S> {
    pub sigma: &'a [S],
    pub v: &'a [S],
    pub v_dot: &'a [S],
    pub theta: &'a [Vec<S>],
    pub theta_dot: &'a [Vec<S>],
}

/// Termwise breakdown of the momentum right-hand side.
#[derive(Debug, Clone)]
pub struct F2Terms<S> {
    /// Flow-map remainder R2.
    pub remainder: Vec<S>,
    /// `-sigma d_t v`.
    pub sigma_dt_v: Vec<S>,
    /// `-rho0 grad(eta) (1/Sigma - 1/Sigma0)` written with the stable quotient.
    pub sigma_diff: Vec<S>,
    /// `-(rho0/Sigma0) grad rho0`, the static initial-gradient term.
    pub initial_gradient: Vec<S>,
    /// `-(sigma/Sigma) grad eta`.
    pub sigma_grad_eta: Vec<S>,
    /// The entropic-gradient coupling differences.
    pub theta_coupling: Vec<S>,
}

/// Termwise breakdown of the species right-hand sides (each `[k][node]`).
#[derive(Debug, Clone)]
pub struct F3Terms<S> {
    /// Flow-map remainder R3.
    pub remainder: Vec<Vec<S>>,
    /// `(gamma2_frozen - gamma2_current) div v`.
    pub div_coupling: Vec<Vec<S>>,
    /// `(R0 - R_current) d_t theta`.
    pub relax_difference: Vec<Vec<S>>,
    /// `div((B_current - B0) grad theta)` in divergence form.
    pub diffusion_difference: Vec<Vec<S>>,
}

/// All right-hand-side terms of one assembly.
pub struct RhsTerms<S> {
    pub remainders: RemainderSet<S>,
    pub f2: F2Terms<S>,
    pub f3: F3Terms<S>,
}

/// Assemble the termwise right-hand sides of the linearized system at one
/// time level of an iterate.
pub fn assemble_rhs_terms<S: Real>(
    it: &IterateSlice<'_, S>,
    fm: &FlowMapState<S>,
    frozen: &FrozenCoefficients<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    grid: &Grid1d<S>,
) -> Result<RhsTerms<S>, LinearError> {
    let nn = grid.len();
    let n = params.n_species();
    let n_h = n - 1;

    // current total density and species densities
    let eta: Vec<S> = it
        .sigma
        .iter()
        .zip(&frozen.rho0)
        .map(|(&s, &r0)| s + r0)
        .collect();
    let mut rhos_at = Vec::with_capacity(nn);
    for i in 0..nn {
        let h_i: Vec<S> = it.theta.iter().map(|f| f[i]).collect();
        rhos_at.push(psi_inverse_point(eta[i], &h_i, params, i)?);
    }

    let remainders = assemble_remainders(&eta, it.v, it.theta, fm, params, model, grid)?;

    let d_eta = grid.deriv(&eta);
    let d_rho0 = grid.deriv(&frozen.rho0);
    let d_theta: Vec<Vec<S>> = it.theta.iter().map(|f| grid.deriv(f)).collect();
    let div_v = grid.div(it.v);

    // momentum terms
    let mut sigma_dt_v = vec![S::zero(); nn];
    let mut sigma_diff = vec![S::zero(); nn];
    let mut initial_gradient = vec![S::zero(); nn];
    let mut sigma_grad_eta = vec![S::zero(); nn];
    let mut theta_coupling = vec![S::zero(); nn];

    // species terms
    let mut div_coupling = vec![vec![S::zero(); nn]; n_h];
    let mut relax_difference = vec![vec![S::zero(); nn]; n_h];
    let mut delta_b_flux = vec![vec![S::zero(); nn]; n_h]; // sum_l (B - B0)_kl d theta_l

    for i in 0..nn {
        let rhos = &rhos_at[i];
        let sigma_l: Vec<S> = rhos
            .iter()
            .zip(frozen.rho0_k.iter().map(|f| f[i]))
            .map(|(&r, r0)| r - r0)
            .collect();
        let t = thermo_point(rhos, params);
        let sig = t.sigma_rho;
        let sig0 = frozen.sigma_rho0[i];
        // 1/Sigma - 1/Sigma0 = (Sigma0 - Sigma) / (Sigma Sigma0)
        let inv_diff = (sig0 - sig) / (sig * sig0);

        sigma_dt_v[i] = -it.sigma[i] * it.v_dot[i];
        sigma_diff[i] = -frozen.rho0[i] * d_eta[i] * inv_diff;
        initial_gradient[i] = -frozen.rho0[i] / sig0 * d_rho0[i];
        sigma_grad_eta[i] = -it.sigma[i] / sig * d_eta[i];

        let mut coup = S::zero();
        for l in 0..n_h {
            let ml = params.m(l + 1);
            let coeff = -sigma_l[l + 1]
                + ml * frozen.rho0_k[l + 1][i] * frozen.rho0[i] * inv_diff
                + ml / sig * (rhos[l + 1] * it.sigma[i] + frozen.rho0[i] * sigma_l[l + 1]);
            coup += coeff * d_theta[l][i];
        }
        theta_coupling[i] = coup;

        // species: coefficient differences against the frozen matrices
        let gamma2_cur = pressure_coupling(rhos, params);
        let c = model.eval(&t.y)?;
        let d = d_matrix(&c.entries, &t.y, rhos.iter().copied().sum());
        let b = diffusion_matrix_b(&d, rhos, t.p);
        for k in 0..n_h {
            let mk = params.m(k + 1);
            // gamma2_frozen - gamma2_current, expanded in perturbations
            let coeff = -sigma_l[k + 1]
                + mk * frozen.rho0_k[k + 1][i] * frozen.rho0[i] * inv_diff
                + mk / sig * (rhos[k + 1] * it.sigma[i] + frozen.rho0[i] * sigma_l[k + 1]);
            debug_assert!(
                ((frozen.gamma2[k][i] - gamma2_cur[k]) - coeff).abs()
                    <= S::of(1e-10) * (S::one() + coeff.abs()),
                "gamma2 difference expansion drifted"
            );
            div_coupling[k][i] = coeff * div_v[i];

            let mut relax = S::zero();
            for l in 0..n_h {
                let ml = params.m(l + 1);
                let dr = if k == l { -mk * sigma_l[k + 1] } else { S::zero() }
                    + mk * ml
                        * (frozen.rho0_k[k + 1][i] * frozen.rho0_k[l + 1][i] * inv_diff
                            + (rhos[k + 1] * sigma_l[l + 1]
                                + frozen.rho0_k[l + 1][i] * sigma_l[k + 1])
                                / sig);
                relax += dr * it.theta_dot[l][i];
            }
            relax_difference[k][i] = relax;

            let mut flux = S::zero();
            for l in 0..n_h {
                flux += (b[(k, l)] - frozen.b0[i][(k, l)]) * d_theta[l][i];
            }
            delta_b_flux[k][i] = flux;
        }
    }

    let diffusion_difference: Vec<Vec<S>> =
        delta_b_flux.iter().map(|f| grid.deriv(f)).collect();

    let f2 = F2Terms {
        remainder: remainders.r2.clone(),
        sigma_dt_v,
        sigma_diff,
        initial_gradient,
        sigma_grad_eta,
        theta_coupling,
    };
    let f3 = F3Terms {
        remainder: remainders.r3.clone(),
        div_coupling,
        relax_difference,
        diffusion_difference,
    };
    Ok(RhsTerms {
        remainders,
        f2,
        f3,
    })
}

/// Assemble the full right-hand side bundle at one time level.
pub fn assemble_rhs<S: Real>(
    it: &IterateSlice<'_, S>,
    fm: &FlowMapState<S>,
    frozen: &FrozenCoefficients<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    grid: &Grid1d<S>,
) -> Result<RhsBundle<S>, LinearError> {
    let terms = assemble_rhs_terms(it, fm, frozen, params, model, grid)?;
    let nn = grid.len();
    let n_h = params.n_species() - 1;
    let div_v = grid.div(it.v);

    let f1: Vec<S> = (0..nn)
        .map(|i| terms.remainders.r1[i] - it.sigma[i] * div_v[i])
        .collect();
    let f1_grad = grid.deriv(&f1);

    let f2: Vec<S> = (0..nn)
        .map(|i| {
            terms.remainders.r2[i]
                + terms.f2.sigma_dt_v[i]
                + terms.f2.sigma_diff[i]
                + terms.f2.initial_gradient[i]
                + terms.f2.sigma_grad_eta[i]
                + terms.f2.theta_coupling[i]
        })
        .collect();

    let mut f3 = vec![vec![S::zero(); nn]; n_h];
    for k in 0..n_h {
        for i in 0..nn {
            f3[k][i] = terms.remainders.r3[k][i]
                + terms.f3.div_coupling[k][i]
                + terms.f3.relax_difference[k][i]
                + terms.f3.diffusion_difference[k][i];
        }
    }

    let f4 = terms.remainders.r4.clone();

    Ok(RhsBundle {
        f1,
        f1_grad,
        f2,
        f3,
        f4,
    })
}

/// Interpretation of the boundary data in [`RhsBundle::f4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryFluxForm {
    /// `f4` is the prescribed normal flux `sum_l B0_kl grad theta_l . n`.
    BWeighted,
    /// `f4` is the prescribed normal derivative `grad theta_k . n`; the
    /// frozen diffusion matrix converts it to a flux at the boundary nodes.
    Reduced,
}

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig<S> {
    /// Implicitness: 1.0 is backward Euler, 0.5 the trapezoidal scheme.
    pub theta: S,
    pub bc_form: BoundaryFluxForm,
}

impl<S: Real> Default for StepperConfig<S> {
    fn default() -> Self {
        Self {
            theta: S::one(),
            bc_form: BoundaryFluxForm::BWeighted,
        }
    }
}

/// A discrete trajectory of the linearized (or iterated) system.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub dt: S,
    /// `sigma[j][i]`: density perturbation at time level j, node i.
    pub sigma: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    /// `theta[j][k][i]`.
    pub theta: Vec<Vec<Vec<S>>>,
}

impl<S: Real> Trajectory<S> {
    pub fn n_levels(&self) -> usize {
        self.sigma.len()
    }

    pub fn n_species_vars(&self) -> usize {
        self.theta[0].len()
    }

    /// Constant-in-time trajectory from initial data (the first Picard
    /// iterate).
    pub fn frozen_initial(frozen: &FrozenCoefficients<S>, n_steps: usize, dt: S) -> Self {
        let nn = frozen.n_nodes();
        Self {
            dt,
            sigma: vec![vec![S::zero(); nn]; n_steps + 1],
            v: vec![frozen.u0.clone(); n_steps + 1],
            theta: vec![frozen.h0.clone(); n_steps + 1],
        }
    }

    /// Backward difference quotient in time at level j (forward at j = 0).
    pub fn time_derivative(&self, j: usize) -> (Vec<S>, Vec<Vec<S>>) {
        let (a, b) = if j == 0 { (0, 1) } else { (j - 1, j) };
        let v_dot = self.v[b]
            .iter()
            .zip(&self.v[a])
            .map(|(&x, &y)| (x - y) / self.dt)
            .collect();
        let theta_dot = self.theta[b]
            .iter()
            .zip(&self.theta[a])
            .map(|(fb, fa)| {
                fb.iter()
                    .zip(fa)
                    .map(|(&x, &y)| (x - y) / self.dt)
                    .collect()
            })
            .collect();
        (v_dot, theta_dot)
    }

    pub fn norms(&self, grid: &Grid1d<S>, idx: NormIndices) -> TrajectoryNorms {
        let theta_series: Vec<Vec<Vec<S>>> = (0..self.n_species_vars())
            .map(|k| self.theta.iter().map(|lvl| lvl[k].clone()).collect())
            .collect();
        TrajectoryNorms::compute(&self.sigma, &self.v, &theta_series, grid, self.dt, idx)
    }

    /// Max-norm distance between two trajectories' matching levels.
    pub fn sub(&self, other: &Self) -> Self {
        let sub_field = |a: &Vec<S>, b: &Vec<S>| -> Vec<S> {
            a.iter().zip(b).map(|(&x, &y)| x - y).collect()
        };
        Self {
            dt: self.dt,
            sigma: self
                .sigma
                .iter()
                .zip(&other.sigma)
                .map(|(a, b)| sub_field(a, b))
                .collect(),
            v: self
                .v
                .iter()
                .zip(&other.v)
                .map(|(a, b)| sub_field(a, b))
                .collect(),
            theta: self
                .theta
                .iter()
                .zip(&other.theta)
                .map(|(la, lb)| la.iter().zip(lb).map(|(a, b)| sub_field(a, b)).collect())
                .collect(),
        }
    }
}

/// Factored implicit stepper for the coupled (v, theta) block. The matrix
/// depends only on the frozen coefficients, the step size and the scheme, so
/// it is factored once and reused across steps and Picard iterations.
pub struct LinearStepper<S> {
    frozen: FrozenCoefficients<S>,
    grid: Grid1d<S>,
    dt: S,
    n_steps: usize,
    cfg: StepperConfig<S>,
    lu: BandedLu<S>,
    b_faces: Vec<Mat<S>>,
    visc: S,
    dim: usize,
}

impl<S: Real> LinearStepper<S> {
    pub fn new(
        frozen: FrozenCoefficients<S>,
        params: &SpeciesParams<S>,
        grid: Grid1d<S>,
        dt: S,
        n_steps: usize,
        cfg: StepperConfig<S>,
    ) -> Result<Self, LinearError> {
        let n = frozen.n_species();
        let n_h = n - 1;
        let nn = grid.len();
        let n_int = grid.n_interior();
        assert_eq!(nn, frozen.n_nodes());
        let h = grid.h();
        let th = cfg.theta;
        let visc = params.viscosity_1d();

        // face-averaged diffusion matrices, SPD-checked
        let mut b_faces = Vec::with_capacity(nn - 1);
        for i in 0..nn - 1 {
            let avg = Mat::from_fn(n_h, |k, l| {
                (frozen.b0[i][(k, l)] + frozen.b0[i + 1][(k, l)]) * S::of(0.5)
            });
            if !avg.is_spd(S::of(1e-10) * (S::one() + avg.max_abs())) {
                return Err(LinearError::FaceNotSpd(i));
            }
            b_faces.push(avg);
        }
        for (i, r) in frozen.r0.iter().enumerate() {
            if !r.is_spd(S::of(1e-10) * (S::one() + r.max_abs())) {
                return Err(LinearError::SingularSystem(LinalgError::NotPositiveDefinite(i)));
            }
        }

        let dim = n_int * n + 2 * n_h;
        let band = 3 * n + 2;
        let mut mat = Banded::zeros(dim, band, band);

        let idx = Indexer { n, n_int };

        // velocity-divergence stencil at a node, (column, coefficient) pairs
        let dv_stencil = |node: usize| -> Vec<(usize, S)> {
            if node == 0 {
                vec![(idx.v(1), S::one() / h)]
            } else if node == nn - 1 {
                vec![(idx.v(n_int), -S::one() / h)]
            } else {
                let mut s = Vec::new();
                if node + 1 <= n_int {
                    s.push((idx.v(node + 1), S::one() / (S::of(2.0) * h)));
                }
                if node >= 2 {
                    s.push((idx.v(node - 1), -S::one() / (S::of(2.0) * h)));
                }
                s
            }
        };

        // momentum rows (interior nodes, scaled by h)
        for i in 1..=n_int {
            let r = idx.v(i);
            mat.add(r, r, h * frozen.rho0[i] / dt);
            // viscous Laplacian
            mat.add(r, r, th * visc * S::of(2.0) / h);
            if i > 1 {
                mat.add(r, idx.v(i - 1), -th * visc / h);
            }
            if i < n_int {
                mat.add(r, idx.v(i + 1), -th * visc / h);
            }
            // entropic coupling sum_l gamma2^l d theta_l (central)
            for l in 0..n_h {
                let c = th * frozen.gamma2[l][i] * S::of(0.5);
                mat.add(r, idx.th(l, i + 1), c);
                mat.add(r, idx.th(l, i - 1), -c);
            }
            // substituted density update: -theta^2 dt gamma1 grad(rho0 div v)
            let c0 = -th * th * dt * frozen.gamma1[i] * S::of(0.5);
            for (col, c) in dv_stencil(i + 1) {
                mat.add(r, col, c0 * frozen.rho0[i + 1] * c);
            }
            for (col, c) in dv_stencil(i - 1) {
                mat.add(r, col, -c0 * frozen.rho0[i - 1] * c);
            }
        }

        // species rows (all nodes, scaled by the quadrature weight)
        for i in 0..nn {
            let w = grid.weight(i);
            for k in 0..n_h {
                let r = idx.th(k, i);
                for l in 0..n_h {
                    mat.add(r, idx.th(l, i), w * frozen.r0[i][(k, l)] / dt);
                }
                // conservative diffusion stencil
                if i + 1 < nn {
                    let bf = &b_faces[i];
                    for l in 0..n_h {
                        mat.add(r, idx.th(l, i), th * bf[(k, l)] / h);
                        mat.add(r, idx.th(l, i + 1), -th * bf[(k, l)] / h);
                    }
                }
                if i > 0 {
                    let bf = &b_faces[i - 1];
                    for l in 0..n_h {
                        mat.add(r, idx.th(l, i), th * bf[(k, l)] / h);
                        mat.add(r, idx.th(l, i - 1), -th * bf[(k, l)] / h);
                    }
                }
                // velocity-divergence coupling
                for (col, c) in dv_stencil(i) {
                    mat.add(r, col, th * w * frozen.gamma2[k][i] * c);
                }
            }
        }

        let lu = mat.lu_factor().map_err(LinearError::SingularSystem)?;
        Ok(Self {
            frozen,
            grid,
            dt,
            n_steps,
            cfg,
            lu,
            b_faces,
            visc,
            dim,
        })
    }

    pub fn grid(&self) -> &Grid1d<S> {
        &self.grid
    }

    pub fn frozen(&self) -> &FrozenCoefficients<S> {
        &self.frozen
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn bc_form(&self) -> BoundaryFluxForm {
        self.cfg.bc_form
    }

    /// boundary data converted to fluxes per the configured form
    fn boundary_flux(&self, f4: &[(S, S)]) -> Vec<(S, S)> {
        let n_h = f4.len();
        let nn = self.frozen.n_nodes();
        match self.cfg.bc_form {
            BoundaryFluxForm::BWeighted => f4.to_vec(),
            BoundaryFluxForm::Reduced => (0..n_h)
                .map(|k| {
                    let mut left = S::zero();
                    let mut right = S::zero();
                    for l in 0..n_h {
                        left += self.frozen.b0[0][(k, l)] * f4[l].0;
                        right += self.frozen.b0[nn - 1][(k, l)] * f4[l].1;
                    }
                    (left, right)
                })
                .collect(),
        }
    }

    /// data-free conservative diffusion operator applied to a theta level
    fn div_b(&self, theta: &[Vec<S>]) -> Vec<Vec<S>> {
        let nn = self.frozen.n_nodes();
        let n_h = theta.len();
        let h = self.grid.h();
        let mut fluxes = vec![vec![S::zero(); nn - 1]; n_h];
        for i in 0..nn - 1 {
            for k in 0..n_h {
                let mut f = S::zero();
                for l in 0..n_h {
                    f += self.b_faces[i][(k, l)] * (theta[l][i + 1] - theta[l][i]) / h;
                }
                fluxes[k][i] = f;
            }
        }
        let mut out = vec![vec![S::zero(); nn]; n_h];
        for k in 0..n_h {
            out[k][0] = fluxes[k][0] / self.grid.weight(0);
            for i in 1..nn - 1 {
                out[k][i] = (fluxes[k][i] - fluxes[k][i - 1]) / self.grid.weight(i);
            }
            out[k][nn - 1] = -fluxes[k][nn - 2] / self.grid.weight(nn - 1);
        }
        out
    }

    /// Advance the linear system over the whole horizon. `rhs(j)` must return
    /// the bundle at time level j (levels `0..=n_steps`; level 0 is only used
    /// by a scheme with `theta < 1`).
    pub fn solve<F>(&self, mut rhs: F) -> Result<Trajectory<S>, LinearError>
    where
        F: FnMut(usize) -> RhsBundle<S>,
    {
        let n_h = self.frozen.n_species() - 1;
        let nn = self.frozen.n_nodes();
        let n_int = self.grid.n_interior();
        let h = self.grid.h();
        let th = self.cfg.theta;
        let one_m = S::one() - th;
        let dt = self.dt;
        let idx = Indexer {
            n: self.frozen.n_species(),
            n_int,
        };

        let mut sigma = vec![S::zero(); nn];
        let mut v = self.frozen.u0.clone();
        let mut theta: Vec<Vec<S>> = self.frozen.h0.clone();

        let mut traj = Trajectory {
            dt,
            sigma: vec![sigma.clone()],
            v: vec![v.clone()],
            theta: vec![theta.clone()],
        };

        let mut rhs_old = rhs(0);
        for step in 0..self.n_steps {
            let rhs_new = rhs(step + 1);
            let mut b = vec![S::zero(); self.dim];

            let div_v_old = self.grid.div(&v);
            let d_sigma_old = self.grid.deriv(&sigma);
            let d_theta_old: Vec<Vec<S>> = theta.iter().map(|f| self.grid.deriv(f)).collect();
            let lap_v_old = self.grid.second_deriv(&v);

            // g_known = theta*f1_new + (1-theta)*(f1_old - rho0 div v_old):
            // the known part of the density update rate
            let g_known: Vec<S> = (0..nn)
                .map(|i| {
                    th * rhs_new.f1[i] + one_m * (rhs_old.f1[i] - self.frozen.rho0[i] * div_v_old[i])
                })
                .collect();
            let d_g_known = self.grid.deriv(&g_known);

            // momentum rows
            for i in 1..=n_int {
                let mut val = self.frozen.rho0[i] * v[i] / dt;
                val += one_m * self.visc * lap_v_old[i];
                val -= self.frozen.gamma1[i] * d_sigma_old[i];
                for l in 0..n_h {
                    val -= one_m * self.frozen.gamma2[l][i] * d_theta_old[l][i];
                }
                val -= th * dt * self.frozen.gamma1[i] * d_g_known[i];
                val += th * rhs_new.f2[i] + one_m * rhs_old.f2[i];
                b[idx.v(i)] = h * val;
            }

            // species rows
            let div_b_old = self.div_b(&theta);
            let flux_new = self.boundary_flux(&rhs_new.f4);
            let flux_old = self.boundary_flux(&rhs_old.f4);
            for i in 0..nn {
                let w = self.grid.weight(i);
                for k in 0..n_h {
                    let mut val = S::zero();
                    for l in 0..n_h {
                        val += self.frozen.r0[i][(k, l)] * theta[l][i] / dt;
                    }
                    val -= one_m * self.frozen.gamma2[k][i] * div_v_old[i];
                    val += one_m * div_b_old[k][i];
                    val += th * rhs_new.f3[k][i] + one_m * rhs_old.f3[k][i];
                    let mut row = w * val;
                    if i == 0 {
                        row += th * flux_new[k].0 + one_m * flux_old[k].0;
                    }
                    if i == nn - 1 {
                        row += th * flux_new[k].1 + one_m * flux_old[k].1;
                    }
                    b[idx.th(k, i)] = row;
                }
            }

            let x = self.lu.solve(&b);

            // unpack
            let mut v_new = vec![S::zero(); nn];
            for i in 1..=n_int {
                v_new[i] = x[idx.v(i)];
            }
            let mut theta_new = vec![vec![S::zero(); nn]; n_h];
            for k in 0..n_h {
                for i in 0..nn {
                    theta_new[k][i] = x[idx.th(k, i)];
                }
            }
            // density update
            let div_v_new = self.grid.div(&v_new);
            let sigma_new: Vec<S> = (0..nn)
                .map(|i| {
                    sigma[i]
                        + dt * (g_known[i] - th * self.frozen.rho0[i] * div_v_new[i])
                })
                .collect();

            sigma = sigma_new;
            v = v_new;
            theta = theta_new;
            traj.sigma.push(sigma.clone());
            traj.v.push(v.clone());
            traj.theta.push(theta.clone());
            rhs_old = rhs_new;
        }
        Ok(traj)
    }
}

struct Indexer {
    n: usize,
    n_int: usize,
}

impl Indexer {
    #[inline]
    fn offset(&self, node: usize) -> usize {
        let n_h = self.n - 1;
        if node == 0 {
            0
        } else if node <= self.n_int {
            n_h + (node - 1) * self.n
        } else {
            n_h + self.n_int * self.n
        }
    }

    #[inline]
    fn v(&self, node: usize) -> usize {
        debug_assert!(node >= 1 && node <= self.n_int);
        self.offset(node)
    }

    #[inline]
    fn th(&self, k: usize, node: usize) -> usize {
        if node == 0 || node == self.n_int + 1 {
            self.offset(node) + k
        } else {
            self.offset(node) + 1 + k
        }
    }
}

/// Convenience wrapper: freeze-free single call matching the solver contract.
/// Returns the trajectory and its discrete norms.
pub fn solve_linear_step<S: Real>(
    frozen: FrozenCoefficients<S>,
    params: &SpeciesParams<S>,
    grid: Grid1d<S>,
    dt: S,
    n_steps: usize,
    cfg: StepperConfig<S>,
    rhs: &[RhsBundle<S>],
    idx: NormIndices,
) -> Result<(Trajectory<S>, TrajectoryNorms), LinearError> {
    assert!(rhs.len() >= n_steps + 1);
    let stepper = LinearStepper::new(frozen, params, grid, dt, n_steps, cfg)?;
    let traj = stepper.solve(|j| rhs[j].clone())?;
    let norms = traj.norms(stepper.grid(), idx);
    Ok((traj, norms))
}

/// Quadratic form whose decay expresses the discrete stability of the scheme:
/// `sum_i w_i [ rho0 v^2 + <R0 theta, theta> + (gamma1/rho0) sigma^2 ]`.
pub fn discrete_energy<S: Real>(
    sigma: &[S],
    v: &[S],
    theta: &[Vec<S>],
    frozen: &FrozenCoefficients<S>,
    grid: &Grid1d<S>,
) -> S {
    let n_h = theta.len();
    let mut e = S::zero();
    for i in 0..grid.len() {
        let w = grid.weight(i);
        let mut q = frozen.rho0[i] * v[i] * v[i];
        for k in 0..n_h {
            for l in 0..n_h {
                q += frozen.r0[i][(k, l)] * theta[k][i] * theta[l][i];
            }
        }
        q += frozen.gamma1[i] / frozen.rho0[i] * sigma[i] * sigma[i];
        e += w * q;
    }
    e
}
