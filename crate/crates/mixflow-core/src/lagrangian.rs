//! Flow-map and coordinate-transform machinery for the particle-following
//! frame `x = y + int_0^t v(y,s) ds` in one space dimension.
//!
//! The inverse Jacobian correction is the scalar `V0(k) = (1+k)^{-1} - 1`
//! with `k = int_0^t dv/dy ds`, so Eulerian derivatives become
//! `d/dx = (1 + V0) d/dy`. Second-order operators pick up the extra terms
//! `A2 = 2 V0 + V0^2` on the second derivative and
//! `A1 = (1 + V0) V0'(k) int_0^t d^2 v/dy^2 ds` on the first; the remainder
//! fields R1..R4 collect everything the transform moves to the right-hand
//! side of the symmetrized system.
//!
//! Time integrals are accumulated by the trapezoidal rule on the stored
//! velocity snapshots. The smallness budget `int_0^t ||dv/dy||_inf ds` must
//! stay below `delta` for `1 + k` to stay invertible; crossing it is the
//! [`LagrangianError::DeltaBudgetExceeded`] signal that the caller's time
//! horizon is too large.

use crate::diffusion::{diffusion_matrix_b, d_matrix, pressure_coupling, CModel, DiffusionError};
use crate::grid::Grid1d;
use crate::mixture::{psi_inverse_point, thermo_point, MixtureError, SpeciesParams};
use crate::scalar::Real;
use thiserror::Error;

/// Default displacement-gradient budget.
pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum LagrangianError {
    #[error("flow-map budget {budget:.3e} exceeded delta = {delta:.3e} at time step {step}")]
    DeltaBudgetExceeded { step: usize, budget: f64, delta: f64 },
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Flow-map data at one time level.
#[derive(Debug, Clone)]
pub struct FlowMapState<S> {
    /// Accumulated velocity gradient `k_v = int_0^t dv/dy ds` per node.
    pub kv: Vec<S>,
    /// `V0(k_v) = (1 + k_v)^{-1} - 1`.
    pub v0: Vec<S>,
    /// `dV0/dk = -(1 + k_v)^{-2}`.
    pub dv0: Vec<S>,
    /// `int_0^t d^2 v/dy^2 ds` per node (drives the first-order terms).
    pub int_grad2v: Vec<S>,
    /// Displacement `int_0^t v ds` per node; the flow map is `y + displacement`.
    pub displacement: Vec<S>,
    /// Running `int_0^t ||dv/dy||_inf ds`.
    pub delta_budget: S,
}

impl<S: Real> FlowMapState<S> {
    /// Zero flow map (identity transformation).
    pub fn identity(n_nodes: usize) -> Self {
        Self {
            kv: vec![S::zero(); n_nodes],
            v0: vec![S::zero(); n_nodes],
            dv0: vec![-S::one(); n_nodes],
            int_grad2v: vec![S::zero(); n_nodes],
            displacement: vec![S::zero(); n_nodes],
            delta_budget: S::zero(),
        }
    }

    /// Build directly from a prescribed `k_v` field (used by the operator
    /// oracles, which specify affine or analytic flow maps).
    pub fn from_kv(kv: Vec<S>, int_grad2v: Vec<S>, displacement: Vec<S>) -> Self {
        let v0: Vec<S> = kv.iter().map(|&k| v0_of(k)).collect();
        let dv0: Vec<S> = kv.iter().map(|&k| dv0_of(k)).collect();
        let delta_budget = kv.iter().fold(S::zero(), |a, &k| a.max(k.abs()));
        Self {
            kv,
            v0,
            dv0,
            int_grad2v,
            displacement,
            delta_budget,
        }
    }
}

#[inline]
pub fn v0_of<S: Real>(k: S) -> S {
    -k / (S::one() + k)
}

#[inline]
pub fn dv0_of<S: Real>(k: S) -> S {
    let w = S::one() + k;
    -S::one() / (w * w)
}

/// Flow-map snapshots at every time level of a velocity history.
#[derive(Debug, Clone)]
pub struct FlowMapHistory<S> {
    pub states: Vec<FlowMapState<S>>,
    pub dt: S,
}

/// Accumulate the flow map over a time-ordered velocity history by the
/// trapezoidal rule. `v_history[j]` is the velocity field at `t_j = j*dt`.
/// Fails at the first step whose budget crosses `delta`.
///
/// The velocity gradient here is the solver's discrete divergence
/// ([`Grid1d::div`]); using one operator for the continuity equation, for R1
/// and for `k_v` keeps the discrete mass balance of the transformed system
/// consistent.
pub fn accumulate_flowmap<S: Real>(
    v_history: &[Vec<S>],
    dt: S,
    grid: &Grid1d<S>,
    delta: S,
) -> Result<FlowMapHistory<S>, LagrangianError> {
    assert!(!v_history.is_empty());
    let nn = grid.len();
    let mut states = Vec::with_capacity(v_history.len());
    states.push(FlowMapState::identity(nn));

    let mut prev_grad = grid.div(&v_history[0]);
    let mut prev_grad2 = grid.second_deriv(&v_history[0]);
    let half = S::of(0.5);
    for step in 1..v_history.len() {
        let grad = grid.div(&v_history[step]);
        let grad2 = grid.second_deriv(&v_history[step]);
        let last = states.last().unwrap();

        let mut kv = Vec::with_capacity(nn);
        let mut ig = Vec::with_capacity(nn);
        let mut disp = Vec::with_capacity(nn);
        for i in 0..nn {
            kv.push(last.kv[i] + half * dt * (prev_grad[i] + grad[i]));
            ig.push(last.int_grad2v[i] + half * dt * (prev_grad2[i] + grad2[i]));
            disp.push(
                last.displacement[i] + half * dt * (v_history[step - 1][i] + v_history[step][i]),
            );
        }
        let budget: S = last.delta_budget
            + half * dt * (grid.norm_inf(&prev_grad) + grid.norm_inf(&grad));
        if budget > delta {
            return Err(LagrangianError::DeltaBudgetExceeded {
                step,
                budget: budget.f64(),
                delta: delta.f64(),
            });
        }
        let mut st = FlowMapState::from_kv(kv, ig, disp);
        st.delta_budget = budget;
        states.push(st);
        prev_grad = grad;
        prev_grad2 = grad2;
    }
    Ok(FlowMapHistory { states, dt })
}

// --- transformed second-order operators ---

/// `A2 = 2 V0 + V0^2` factor on the second derivative (Laplacian form).
#[inline]
pub fn a2_laplacian_coeff<S: Real>(v0: S) -> S {
    S::of(2.0) * v0 + v0 * v0
}

/// `A1 = (1 + V0) V0'(k) int d^2v` factor on the first derivative.
#[inline]
pub fn a1_laplacian_coeff<S: Real>(v0: S, dv0: S, int_grad2v: S) -> S {
    (S::one() + v0) * dv0 * int_grad2v
}

/// Termwise `A2` contributions of the grad-div decomposition; each term
/// carries a `V0` factor. In one dimension the three terms sum to the same
/// coefficient as the Laplacian form.
#[inline]
pub fn a2_divgrad_terms<S: Real>(v0: S) -> [S; 3] {
    [v0, v0, v0 * v0]
}

/// Termwise `A1` contributions of the grad-div decomposition.
#[inline]
pub fn a1_divgrad_terms<S: Real>(v0: S, dv0: S, int_grad2v: S) -> [S; 2] {
    [dv0 * int_grad2v, v0 * dv0 * int_grad2v]
}

/// Eulerian Laplacian of a field expressed in Lagrangian coordinates:
/// `Lap_y f + A2 d^2 f + A1 d f`.
pub fn transformed_laplacian<S: Real>(f: &[S], fm: &FlowMapState<S>, grid: &Grid1d<S>) -> Vec<S> {
    let d1 = grid.deriv(f);
    let d2 = grid.second_deriv(f);
    (0..f.len())
        .map(|i| {
            d2[i]
                + a2_laplacian_coeff(fm.v0[i]) * d2[i]
                + a1_laplacian_coeff(fm.v0[i], fm.dv0[i], fm.int_grad2v[i]) * d1[i]
        })
        .collect()
}

/// Eulerian grad-div of a velocity field expressed in Lagrangian coordinates.
pub fn transformed_divgrad<S: Real>(v: &[S], fm: &FlowMapState<S>, grid: &Grid1d<S>) -> Vec<S> {
    let d1 = grid.deriv(v);
    let d2 = grid.second_deriv(v);
    (0..v.len())
        .map(|i| {
            let a2: S = a2_divgrad_terms(fm.v0[i]).into_iter().sum();
            let a1: S = a1_divgrad_terms(fm.v0[i], fm.dv0[i], fm.int_grad2v[i])
                .into_iter()
                .sum();
            d2[i] + a2 * d2[i] + a1 * d1[i]
        })
        .collect()
}

// --- nonlinear remainders ---

/// The remainder fields of the transformed system.
#[derive(Debug, Clone)]
pub struct RemainderSet<S> {
    /// Continuity remainder.
    pub r1: Vec<S>,
    /// Momentum remainder.
    pub r2: Vec<S>,
    /// Species remainders, `r3[k][node]`.
    pub r3: Vec<Vec<S>>,
    /// Boundary remainders `(left, right)` per entropic variable.
    pub r4: Vec<(S, S)>,
}

impl<S: Real> RemainderSet<S> {
    pub fn total_abs(&self) -> S {
        let mut s = S::zero();
        for v in self.r1.iter().chain(self.r2.iter()) {
            s += v.abs();
        }
        for f in &self.r3 {
            for v in f {
                s += v.abs();
            }
        }
        for (l, r) in &self.r4 {
            s += l.abs() + r.abs();
        }
        s
    }
}

/// Assemble R1..R4 of the transformed system at one time level.
///
/// `eta` is the total density, `v` the velocity and `theta` the entropic
/// variables in Lagrangian coordinates; the species densities behind the
/// matrix coefficients are recovered pointwise through the inverse change of
/// variables.
///
/// The boundary remainder keeps only the `V0` part: on an interval the
/// outward normal is constant, so the curvature correction of the transformed
/// normal vanishes identically. Its sign is fixed by requiring that
/// `grad theta . n = R4` be exactly the zero-flux condition in Eulerian
/// variables, i.e. `R4 = -n . (V0 grad theta)`.
pub fn assemble_remainders<S: Real>(
    eta: &[S],
    v: &[S],
    theta: &[Vec<S>],
    fm: &FlowMapState<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    grid: &Grid1d<S>,
) -> Result<RemainderSet<S>, LagrangianError> {
    let nn = grid.len();
    let n = params.n_species();
    let n_h = n - 1;
    debug_assert_eq!(theta.len(), n_h);

    let div_v = grid.div(v);
    let d1v = grid.deriv(v);
    let d2v = grid.second_deriv(v);
    let d_eta = grid.deriv(eta);
    let d_theta: Vec<Vec<S>> = theta.iter().map(|f| grid.deriv(f)).collect();
    let d2_theta: Vec<Vec<S>> = theta.iter().map(|f| grid.second_deriv(f)).collect();

    // species densities and state-dependent coefficient fields per node
    let mut gamma2 = vec![vec![S::zero(); nn]; n_h]; // rho_{k+1} - m_{k+1} rho_{k+1} rho / Sigma
    let mut sigma_rho = vec![S::zero(); nn];
    let mut b_fields = vec![vec![vec![S::zero(); nn]; n_h]; n_h];
    for i in 0..nn {
        let h_i: Vec<S> = theta.iter().map(|f| f[i]).collect();
        let rhos = psi_inverse_point(eta[i], &h_i, params, i)?;
        let t = thermo_point(&rhos, params);
        sigma_rho[i] = t.sigma_rho;
        for (k, a) in pressure_coupling(&rhos, params).into_iter().enumerate() {
            gamma2[k][i] = a;
        }
        let c = model.eval(&t.y)?;
        let d = d_matrix(&c.entries, &t.y, rhos.iter().copied().sum());
        let b = diffusion_matrix_b(&d, &rhos, t.p);
        for k in 0..n_h {
            for l in 0..n_h {
                b_fields[k][l][i] = b[(k, l)];
            }
        }
    }
    let db_fields: Vec<Vec<Vec<S>>> = b_fields
        .iter()
        .map(|row| row.iter().map(|f| grid.deriv(f)).collect())
        .collect();

    // R1 = -eta V0 dv
    let r1: Vec<S> = (0..nn).map(|i| -eta[i] * fm.v0[i] * div_v[i]).collect();

    // R2: viscous operator remainders minus the V0 pressure terms
    let mu = params.mu();
    let mu_nu = params.mu() + params.nu();
    let mut r2 = vec![S::zero(); nn];
    for i in 0..nn {
        let a2l = a2_laplacian_coeff(fm.v0[i]);
        let a1l = a1_laplacian_coeff(fm.v0[i], fm.dv0[i], fm.int_grad2v[i]);
        let a2d: S = a2_divgrad_terms(fm.v0[i]).into_iter().sum();
        let a1d: S = a1_divgrad_terms(fm.v0[i], fm.dv0[i], fm.int_grad2v[i])
            .into_iter()
            .sum();
        let mut val = mu * (a2l * d2v[i] + a1l * d1v[i]) + mu_nu * (a2d * d2v[i] + a1d * d1v[i]);
        val -= eta[i] / sigma_rho[i] * fm.v0[i] * d_eta[i];
        for k in 0..n_h {
            val -= fm.v0[i] * gamma2[k][i] * d_theta[k][i];
        }
        r2[i] = val;
    }

    // R3^k = sum_l [ B_kl (A2 d2 theta_l + A1 d theta_l)
    //               + (2 V0 + V0^2) dB_kl d theta_l ] - gamma2^k V0 dv
    let mut r3 = vec![vec![S::zero(); nn]; n_h];
    for k in 0..n_h {
        for i in 0..nn {
            let a2l = a2_laplacian_coeff(fm.v0[i]);
            let a1l = a1_laplacian_coeff(fm.v0[i], fm.dv0[i], fm.int_grad2v[i]);
            let mut val = S::zero();
            for l in 0..n_h {
                val += b_fields[k][l][i] * (a2l * d2_theta[l][i] + a1l * d_theta[l][i]);
                val += a2l * db_fields[k][l][i] * d_theta[l][i];
            }
            val -= gamma2[k][i] * fm.v0[i] * div_v[i];
            r3[k][i] = val;
        }
    }

    // R4^k = -n . (V0 d theta_k) at the two boundary nodes (n = -1, +1)
    let r4: Vec<(S, S)> = (0..n_h)
        .map(|k| {
            let left = fm.v0[0] * d_theta[k][0];
            let right = -fm.v0[nn - 1] * d_theta[k][nn - 1];
            (left, right)
        })
        .collect();

    Ok(RemainderSet { r1, r2, r3, r4 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid(n: usize) -> Grid1d<f64> {
        Grid1d::new(n)
    }

    #[test]
    fn zero_velocity_gives_identity_flowmap() {
        let g = grid(15);
        let hist = vec![g.zeros(); 4];
        let fm = accumulate_flowmap(&hist, 0.1, &g, DEFAULT_DELTA).unwrap();
        for st in &fm.states {
            assert!(st.kv.iter().all(|&k| k == 0.0));
            assert!(st.v0.iter().all(|&v| v == 0.0));
            assert!(st.int_grad2v.iter().all(|&v| v == 0.0));
            assert_eq!(st.delta_budget, 0.0);
        }
    }

    #[test]
    fn constant_gradient_closed_form() {
        // v(y) = g*y constant in time: k_v = t*g, V0 = -t*g/(1+t*g)
        let g = grid(23);
        let slope = 0.04;
        let dt = 0.25;
        let steps = 9;
        let hist: Vec<Vec<f64>> = (0..=steps).map(|_| g.sample(|y| slope * y)).collect();
        let fm = accumulate_flowmap(&hist, dt, &g, DEFAULT_DELTA).unwrap();
        for (j, st) in fm.states.iter().enumerate() {
            let t = j as f64 * dt;
            for i in 0..g.len() {
                assert_relative_eq!(st.kv[i], t * slope, epsilon = 1e-14);
                assert_relative_eq!(st.v0[i], -t * slope / (1.0 + t * slope), epsilon = 1e-14);
                // inverse identity
                assert_relative_eq!((1.0 + st.kv[i]) * (1.0 + st.v0[i]), 1.0, epsilon = 1e-14);
            }
            assert_relative_eq!(st.delta_budget, t * slope, epsilon = 1e-14);
        }
    }

    #[test]
    fn budget_exceeded_fires_at_first_crossing() {
        let g = grid(15);
        let slope = 0.03;
        let dt = 1.0;
        let hist: Vec<Vec<f64>> = (0..=6).map(|_| g.sample(|y| slope * y)).collect();
        // budget after step j is j*dt*slope = 0.03 j; delta = 0.1 crossed at j = 4
        match accumulate_flowmap(&hist, dt, &g, 0.1) {
            Err(LagrangianError::DeltaBudgetExceeded { step, budget, .. }) => {
                assert_eq!(step, 4);
                assert!((budget - 0.12).abs() < 1e-12);
            }
            other => panic!("expected DeltaBudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn budget_is_nondecreasing() {
        let g = grid(19);
        let dt = 0.05;
        let hist: Vec<Vec<f64>> = (0..=10)
            .map(|j| {
                let amp = 0.02 * (1.0 + (j as f64 * 0.7).sin());
                g.sample(|y| amp * (std::f64::consts::PI * y).sin())
            })
            .collect();
        let fm = accumulate_flowmap(&hist, dt, &g, 10.0).unwrap();
        for w in fm.states.windows(2) {
            assert!(w[1].delta_budget >= w[0].delta_budget);
        }
    }

    #[test]
    fn uniform_dilation_matches_chain_rule() {
        // frozen affine map x = (1+s) y: operator must equal (1+s)^-2 d2/dy2
        let s = 0.08;
        let mut errs = Vec::new();
        for n in [32usize, 64, 128] {
            let g = grid(n);
            let fm = FlowMapState::from_kv(vec![s; g.len()], g.zeros(), g.sample(|y| s * y));
            let f_pulled = g.sample(|y| ((1.0 + s) * y).sin());
            let lap = transformed_laplacian(&f_pulled, &fm, &g);
            let mut worst = 0.0f64;
            for i in 1..g.len() - 1 {
                let x = (1.0 + s) * g.x(i);
                worst = worst.max((lap[i] + x.sin()).abs());
            }
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "dilation oracle order {order}");
        }
    }

    #[test]
    fn quadratic_fields_are_exact_for_affine_maps() {
        let s = -0.06;
        let g = grid(21);
        let fm = FlowMapState::from_kv(vec![s; g.len()], g.zeros(), g.sample(|y| s * y));
        // f(x) = 3x^2 - x: Lap_x f = 6; pulled back f((1+s)y)
        let f_pulled = g.sample(|y| {
            let x = (1.0 + s) * y;
            3.0 * x * x - x
        });
        for form in [
            transformed_laplacian(&f_pulled, &fm, &g),
            transformed_divgrad(&f_pulled, &fm, &g),
        ] {
            for i in 0..g.len() {
                assert_relative_eq!(form[i], 6.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn analytic_flowmap_oracle_with_first_order_terms() {
        // v(y,t) = w(y) constant in time, t = 1: k_v = w', budget = max|w'|
        let amp = 0.05 / (2.0 * std::f64::consts::PI);
        let w = |y: f64| amp * (2.0 * std::f64::consts::PI * y).sin();
        let dw = |y: f64| 0.05 * (2.0 * std::f64::consts::PI * y).cos();
        let d2w =
            |y: f64| -0.05 * 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * y).sin();
        let f = |x: f64| (3.0 * x).sin();
        let d2f = |x: f64| -9.0 * (3.0 * x).sin();

        let mut errs = Vec::new();
        for n in [32usize, 64, 128, 256] {
            let g = grid(n);
            let fm = FlowMapState::from_kv(g.sample(dw), g.sample(d2w), g.sample(w));
            let f_pulled = g.sample(|y| f(y + w(y)));
            let lap = transformed_laplacian(&f_pulled, &fm, &g);
            let mut worst = 0.0f64;
            for i in 2..g.len() - 2 {
                let x = g.x(i) + w(g.x(i));
                worst = worst.max((lap[i] - d2f(x)).abs());
            }
            errs.push(worst);
        }
        for wnd in errs.windows(2) {
            let order = (wnd[0] / wnd[1]).log2();
            assert!(order > 1.85, "analytic flow-map oracle order {order}");
        }
    }

    #[test]
    fn divgrad_terms_vanish_without_velocity_history() {
        let terms2 = a2_divgrad_terms(0.0f64);
        assert!(terms2.iter().all(|&t| t == 0.0));
        // A1 terms carry the accumulated second-gradient integral
        let terms1 = a1_divgrad_terms(0.0f64, -1.0, 0.0);
        assert!(terms1.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn material_derivative_identity() {
        // d/dt f(Phi(y,t), t) = (d_t f + v grad_x f)(Phi(y,t), t)
        let g = grid(40);
        let psi = |y: f64| 0.03 * (std::f64::consts::PI * y).sin();
        let sdot = |t: f64| (1.5 * t).cos();
        let s = |t: f64| (1.5 * t).sin() / 1.5;
        let f = |x: f64, t: f64| (2.0 * x + 0.3 * t).sin();
        let ft = |x: f64, t: f64| 0.3 * (2.0 * x + 0.3 * t).cos();
        let fx = |x: f64, t: f64| 2.0 * (2.0 * x + 0.3 * t).cos();

        let mut errs = Vec::new();
        for steps in [16usize, 32, 64] {
            let dt = 0.4 / steps as f64;
            let mut worst = 0.0f64;
            for j in 1..steps {
                let t = j as f64 * dt;
                for i in 0..g.len() {
                    let y = g.x(i);
                    let phi = |tau: f64| y + psi(y) * s(tau);
                    let lhs = (f(phi(t + dt), t + dt) - f(phi(t - dt), t - dt)) / (2.0 * dt);
                    let v = psi(y) * sdot(t);
                    let rhs = ft(phi(t), t) + v * fx(phi(t), t);
                    worst = worst.max((lhs - rhs).abs());
                }
            }
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.9, "material derivative order {order}");
        }
    }

    #[test]
    fn remainders_vanish_for_zero_velocity() {
        let g = grid(17);
        let params = SpeciesParams::new(vec![1.0, 2.0, 3.0], 1.0, 0.5).unwrap();
        let fm = FlowMapState::identity(g.len());
        let eta = g.sample(|x| 3.0 + 0.2 * (x * 5.0).sin());
        let theta: Vec<Vec<f64>> = (0..2)
            .map(|k| g.sample(|x| 0.1 * ((k + 1) as f64 * x).cos()))
            .collect();
        let v = g.zeros();
        let rem =
            assemble_remainders(&eta, &v, &theta, &fm, &params, &CModel::Exemplary, &g).unwrap();
        assert_eq!(rem.total_abs(), 0.0);
    }

    #[test]
    fn r1_constant_gradient_hand_value() {
        // dv/dy = g, k_v = t*g: R1 = eta * t g^2 / (1 + t g)
        let g = grid(25);
        let slope = 0.04;
        let dt = 0.5;
        let hist: Vec<Vec<f64>> = (0..=4).map(|_| g.sample(|y| slope * y)).collect();
        let params = SpeciesParams::new(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let fm = accumulate_flowmap(&hist, dt, &g, DEFAULT_DELTA).unwrap();
        let eta = g.sample(|_| 2.0);
        let theta = vec![g.zeros()];
        let v = g.sample(|y| slope * y);
        let t = 4.0 * dt;
        let rem = assemble_remainders(
            &eta,
            &v,
            &theta,
            &fm.states[4],
            &params,
            &CModel::Exemplary,
            &g,
        )
        .unwrap();
        let expect = 2.0 * t * slope * slope / (1.0 + t * slope);
        for i in 0..g.len() {
            assert_relative_eq!(rem.r1[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn r4_covers_only_the_v0_part() {
        let g = grid(19);
        let params = SpeciesParams::new(vec![1.0, 2.0], 1.0, 0.0).unwrap();
        let s = 0.07;
        let fm = FlowMapState::from_kv(vec![s; g.len()], g.zeros(), g.sample(|y| s * y));
        let eta = g.sample(|_| 2.0);
        let theta = vec![g.sample(|x| 0.2 * x * x + 0.1 * x)];
        let v = g.zeros();
        let rem =
            assemble_remainders(&eta, &v, &theta, &fm, &params, &CModel::Exemplary, &g).unwrap();
        let v0 = -s / (1.0 + s);
        // left normal -1: R4 = +V0 * dtheta(0); right normal +1: R4 = -V0 * dtheta(1)
        assert_relative_eq!(rem.r4[0].0, v0 * 0.1, epsilon = 1e-10);
        assert_relative_eq!(rem.r4[0].1, -v0 * 0.5, epsilon = 1e-10);
    }
}
