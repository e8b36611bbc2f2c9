//! Fixed-point driver: repeatedly solve the frozen-coefficient linear system
//! with right-hand sides assembled at the previous iterate, monitor the
//! contraction of the difference norms, and shrink the time horizon when the
//! iteration leaves its ball or the flow-map budget trips.
//!
//! The first iterate is the initial data held constant in time, which
//! satisfies the initial-condition pinning by construction. The ball radius
//! is adaptive: ten times the norm of the first output. Convergence requires
//! both a small difference norm and a small residual of the full nonlinear
//! transformed system evaluated at the converged trajectory.

use crate::diffusion::{diffusion_matrix_b, d_matrix, pressure_coupling, CModel, DiffusionError};
use crate::grid::Grid1d;
use crate::lagrangian::{
    accumulate_flowmap, assemble_remainders, FlowMapHistory, LagrangianError,
};
use crate::linear::{
    assemble_rhs, BoundaryFluxForm, FrozenCoefficients, IterateSlice, LinearError, LinearStepper,
    StepperConfig, Trajectory,
};
use crate::mixture::{
    psi_inverse_point, relaxation_matrix, thermo_point, MixtureError, PrimitiveState,
    SpeciesParams,
};
use crate::norms::{h1_norm, NormIndices};
use crate::scalar::Real;
use serde::Serialize;
use thiserror::Error;

/// Grid tolerance for the initial compatibility conditions.
pub const COMPAT_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PicardError {
    #[error("initial data violates compatibility: {0}")]
    CompatibilityViolated(String),
    #[error("iterate norm {norm:.3e} escaped the ball of radius {radius:.3e}")]
    BallEscape { norm: f64, radius: f64 },
    #[error("no contraction down to the minimal horizon; last report: {0:?}")]
    NoContraction(Box<ContractionReport>),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Linear(#[from] LinearError),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone)]
pub struct PicardConfig<S> {
    pub max_iter: usize,
    /// Convergence threshold on the difference norm `[U_{j+1} - U_j]_T`.
    pub abs_tol: S,
    /// Acceptance threshold on the nonlinear residual of the converged
    /// trajectory (discrete L2-in-time-and-space).
    pub res_tol: S,
    /// Ball radius as a multiple of the first output norm.
    pub ball_factor: S,
    /// Flow-map displacement-gradient budget.
    pub delta: S,
    /// Smallest horizon the driver will shrink to.
    pub t_min: S,
    pub idx: NormIndices,
    pub stepper: StepperConfig<S>,
}

impl<S: Real> Default for PicardConfig<S> {
    fn default() -> Self {
        Self {
            max_iter: 50,
            abs_tol: S::of(1e-9),
            res_tol: S::of(0.5),
            ball_factor: S::of(10.0),
            delta: S::of(crate::lagrangian::DEFAULT_DELTA),
            t_min: S::of(1e-4),
            idx: NormIndices::default(),
            stepper: StepperConfig::default(),
        }
    }
}

/// Smallness diagnostics of one Picard application (input side) plus the
/// output norm.
#[derive(Debug, Clone, Serialize)]
pub struct PicardDiagnostics {
    /// `||V0||_inf` over the iterate's flow map.
    pub v0_max: f64,
    /// `sup_t ||sigma||_{H1_q}` of the input iterate.
    pub sup_sigma_h1: f64,
    /// `sup_t max_k ||rho_k - rho0_k||_inf` of the input iterate.
    pub sup_rho_dev: f64,
    /// Flow-map budget consumed by the input iterate.
    pub delta_budget: f64,
    /// `[U]_T` of the output trajectory.
    pub output_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    /// Difference norms `d_j = [U_{j+1} - U_j]_T`.
    pub d: Vec<f64>,
    /// Empirical ratios `q_j = d_{j+1} / d_j`.
    pub q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Residual of the nonlinear transformed system at the final trajectory.
    pub final_residual: f64,
    pub ball_radius: f64,
    pub t_final: f64,
    pub t_halvings: usize,
    pub diagnostics: Vec<PicardDiagnostics>,
    /// Relative drift of the total Eulerian mass over the horizon.
    pub mass_error: f64,
    /// Total density stays within `[a1, n a2 + a1]` after recovery.
    pub rho_bounds_ok: bool,
    /// Smallest recovered species density over the horizon.
    pub positivity_floor: f64,
}

/// Contraction ratios `d_{j+1}/d_j` restricted to pairs above the round-off
/// floor of the difference norms; ratios computed from differences at the
/// solver noise level say nothing about the fixed-point map.
pub fn clean_contraction_ratios(d: &[f64]) -> Vec<f64> {
    const FLOOR: f64 = 1e-12;
    d.windows(2)
        .filter(|w| w[1] > FLOOR && w[0] > FLOOR)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Converged (or best-effort) solution with everything needed for output.
pub struct FixedPointSolution<S> {
    pub trajectory: Trajectory<S>,
    pub flowmap: FlowMapHistory<S>,
    pub frozen: FrozenCoefficients<S>,
    pub grid: Grid1d<S>,
    pub dt: S,
    pub t_final: S,
}

/// One application of the fixed-point map: given the current iterate, build
/// its flow map, assemble the right-hand sides level by level, and solve the
/// linear system.
pub fn picard_map<S: Real>(
    current: &Trajectory<S>,
    stepper: &LinearStepper<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    delta: S,
    idx: NormIndices,
) -> Result<(Trajectory<S>, FlowMapHistory<S>, PicardDiagnostics), PicardError> {
    let grid = stepper.grid();
    let frozen = stepper.frozen();
    let fm = accumulate_flowmap(&current.v, current.dt, grid, delta)?;

    let n_levels = current.n_levels();
    let mut bundles = Vec::with_capacity(n_levels);
    for j in 0..n_levels {
        let (v_dot, theta_dot) = current.time_derivative(j);
        let it = IterateSlice {
            sigma: &current.sigma[j],
            v: &current.v[j],
            v_dot: &v_dot,
            theta: &current.theta[j],
            theta_dot: &theta_dot,
        };
        let mut rhs = assemble_rhs(&it, &fm.states[j], frozen, params, model, grid)?;
        if stepper.bc_form() == BoundaryFluxForm::BWeighted {
            // the remainders carry normal-derivative data; convert to fluxes
            rhs.f4 = weight_boundary_data(&rhs.f4, frozen);
        }
        bundles.push(rhs);
    }

    let output = stepper.solve(|j| bundles[j].clone())?;

    let nn = grid.len();
    let mut v0_max = S::zero();
    for st in &fm.states {
        v0_max = v0_max.max(grid.norm_inf(&st.v0));
    }
    let mut sup_sigma = S::zero();
    for level in &current.sigma {
        sup_sigma = sup_sigma.max(h1_norm(level, grid, idx.q));
    }
    let mut sup_rho_dev = S::zero();
    for j in 0..n_levels {
        for i in 0..nn {
            let h_i: Vec<S> = current.theta[j].iter().map(|f| f[i]).collect();
            let eta = current.sigma[j][i] + frozen.rho0[i];
            let rhos = psi_inverse_point(eta, &h_i, params, i)?;
            for (k, r) in rhos.iter().enumerate() {
                sup_rho_dev = sup_rho_dev.max((*r - frozen.rho0_k[k][i]).abs());
            }
        }
    }
    let norms = output.norms(grid, idx);
    let diag = PicardDiagnostics {
        v0_max: v0_max.f64(),
        sup_sigma_h1: sup_sigma.f64(),
        sup_rho_dev: sup_rho_dev.f64(),
        delta_budget: fm.states.last().unwrap().delta_budget.f64(),
        output_norm: norms.total,
    };
    Ok((output, fm, diag))
}

fn weight_boundary_data<S: Real>(
    f4: &[(S, S)],
    frozen: &FrozenCoefficients<S>,
) -> Vec<(S, S)> {
    let n_h = f4.len();
    let nn = frozen.n_nodes();
    (0..n_h)
        .map(|k| {
            let mut left = S::zero();
            let mut right = S::zero();
            for l in 0..n_h {
                left += frozen.b0[0][(k, l)] * f4[l].0;
                right += frozen.b0[nn - 1][(k, l)] * f4[l].1;
            }
            (left, right)
        })
        .collect()
}

/// Check the discrete compatibility conditions of the initial data:
/// vanishing boundary velocity and vanishing boundary normal derivative of
/// every entropic variable.
///
/// The boundary velocity is compared against the absolute tolerance. The
/// entropic slopes are measured with the second-order one-sided stencil,
/// whose own truncation error on analytically compatible data is of the
/// order `h^2 ||d^2 h||`; the tolerance therefore carries that allowance on
/// top of the absolute floor, so that smooth compatible data pass at any
/// resolution while a genuine O(1) boundary slope is still rejected.
pub fn check_compatibility<S: Real>(
    frozen: &FrozenCoefficients<S>,
    grid: &Grid1d<S>,
) -> Result<(), PicardError> {
    let nn = grid.len();
    let tol = S::of(COMPAT_TOL);
    if frozen.u0[0].abs() > tol || frozen.u0[nn - 1].abs() > tol {
        return Err(PicardError::CompatibilityViolated(format!(
            "boundary velocity ({:e}, {:e})",
            frozen.u0[0].f64(),
            frozen.u0[nn - 1].f64()
        )));
    }
    for (k, h) in frozen.h0.iter().enumerate() {
        let curvature = grid.norm_inf(&grid.second_deriv(h));
        let slope_tol = tol.max(S::of(5.0) * grid.h() * grid.h() * curvature);
        let (l, r) = grid.boundary_normal_deriv(h);
        if l.abs() > slope_tol || r.abs() > slope_tol {
            return Err(PicardError::CompatibilityViolated(format!(
                "normal derivative of entropic variable {k}: ({:e}, {:e}), tolerance {:e}",
                l.f64(),
                r.f64(),
                slope_tol.f64()
            )));
        }
    }
    Ok(())
}

/// Residual of the full nonlinear transformed system at a trajectory, as a
/// discrete L2 norm in time and space over interior nodes and interior time
/// levels (centered time differences).
pub fn nonlinear_residual<S: Real>(
    traj: &Trajectory<S>,
    fm: &FlowMapHistory<S>,
    frozen: &FrozenCoefficients<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    grid: &Grid1d<S>,
) -> Result<S, PicardError> {
    let nn = grid.len();
    let n_h = params.n_species() - 1;
    let dt = traj.dt;
    let n_levels = traj.n_levels();
    let visc = params.viscosity_1d();
    let mut acc = S::zero();

    for j in 1..n_levels - 1 {
        let eta: Vec<S> = traj.sigma[j]
            .iter()
            .zip(&frozen.rho0)
            .map(|(&s, &r)| s + r)
            .collect();
        let eta_p: Vec<S> = traj.sigma[j + 1]
            .iter()
            .zip(&frozen.rho0)
            .map(|(&s, &r)| s + r)
            .collect();
        let eta_m: Vec<S> = traj.sigma[j - 1]
            .iter()
            .zip(&frozen.rho0)
            .map(|(&s, &r)| s + r)
            .collect();
        let v = &traj.v[j];
        let theta = &traj.theta[j];
        let rem = assemble_remainders(&eta, v, theta, &fm.states[j], params, model, grid)?;

        let div_v = grid.div(v);
        let d2v = grid.second_deriv(v);
        let d_eta = grid.deriv(&eta);
        let d_theta: Vec<Vec<S>> = theta.iter().map(|f| grid.deriv(f)).collect();

        let mut b_flux = vec![vec![S::zero(); nn]; n_h];
        let mut gamma2 = vec![vec![S::zero(); nn]; n_h];
        let mut sigma_rho = vec![S::zero(); nn];
        let mut relax = Vec::with_capacity(nn);
        for i in 0..nn {
            let h_i: Vec<S> = theta.iter().map(|f| f[i]).collect();
            let rhos = psi_inverse_point(eta[i], &h_i, params, i)?;
            let tp = thermo_point(&rhos, params);
            sigma_rho[i] = tp.sigma_rho;
            for (k, a) in pressure_coupling(&rhos, params).into_iter().enumerate() {
                gamma2[k][i] = a;
            }
            relax.push(relaxation_matrix(&rhos, params));
            let c = model.eval(&tp.y)?;
            let d = d_matrix(&c.entries, &tp.y, rhos.iter().copied().sum());
            let b = diffusion_matrix_b(&d, &rhos, tp.p);
            for k in 0..n_h {
                for l in 0..n_h {
                    b_flux[k][i] += b[(k, l)] * d_theta[l][i];
                }
            }
        }
        let div_b: Vec<Vec<S>> = b_flux.iter().map(|f| grid.deriv(f)).collect();

        let two_dt = S::of(2.0) * dt;
        for i in 1..nn - 1 {
            let w = grid.weight(i);
            let eta_t = (eta_p[i] - eta_m[i]) / two_dt;
            let v_t = (traj.v[j + 1][i] - traj.v[j - 1][i]) / two_dt;

            let r1 = eta_t + eta[i] * div_v[i] - rem.r1[i];
            let mut r2 = eta[i] * v_t - visc * d2v[i] + eta[i] / sigma_rho[i] * d_eta[i]
                - rem.r2[i];
            for l in 0..n_h {
                r2 += gamma2[l][i] * d_theta[l][i];
            }
            acc += dt * w * (r1 * r1 + r2 * r2);
            for k in 0..n_h {
                let mut r3 = gamma2[k][i] * div_v[i] - div_b[k][i] - rem.r3[k][i];
                for l in 0..n_h {
                    let th_t = (traj.theta[j + 1][l][i] - traj.theta[j - 1][l][i]) / two_dt;
                    r3 += relax[i][(k, l)] * th_t;
                }
                acc += dt * w * r3 * r3;
            }
        }
    }
    Ok(acc.sqrt())
}

/// Eulerian recovery: species densities per time level integrated with the
/// flow-map Jacobian, plus bound checks.
struct Recovery {
    mass_error: f64,
    rho_bounds_ok: bool,
    positivity_floor: f64,
}

fn recover_and_check<S: Real>(
    traj: &Trajectory<S>,
    fm: &FlowMapHistory<S>,
    frozen: &FrozenCoefficients<S>,
    params: &SpeciesParams<S>,
    grid: &Grid1d<S>,
    a1: S,
    a2: S,
) -> Result<Recovery, PicardError> {
    let nn = grid.len();
    let n = params.n_species();
    let mut mass0 = S::zero();
    let mut worst_drift = S::zero();
    let mut floor = S::infinity();
    let mut bounds_ok = true;
    let upper = S::from_usize(n).unwrap() * a2 + a1;
    for j in 0..traj.n_levels() {
        let mut mass = S::zero();
        for i in 0..nn {
            let h_i: Vec<S> = traj.theta[j].iter().map(|f| f[i]).collect();
            let eta = traj.sigma[j][i] + frozen.rho0[i];
            if eta < a1 || eta > upper {
                bounds_ok = false;
            }
            let rhos = psi_inverse_point(eta, &h_i, params, i)?;
            for &r in &rhos {
                floor = floor.min(r);
            }
            // d x / d y = 1 + k_v
            mass += grid.weight(i) * eta * (S::one() + fm.states[j].kv[i]);
        }
        if j == 0 {
            mass0 = mass;
        } else {
            worst_drift = worst_drift.max((mass - mass0).abs() / mass0);
        }
    }
    Ok(Recovery {
        mass_error: worst_drift.f64(),
        rho_bounds_ok: bounds_ok,
        positivity_floor: floor.f64(),
    })
}

/// Eulerian snapshot on the fixed grid, recovered through the flow map by
/// piecewise-linear interpolation.
#[derive(Debug, Clone)]
pub struct EulerianSnapshot<S> {
    pub t: S,
    pub rho_k: Vec<Vec<S>>,
    pub u: Vec<S>,
    pub h: Vec<Vec<S>>,
    pub pressure: Vec<S>,
}

pub fn to_eulerian<S: Real>(
    sol: &FixedPointSolution<S>,
    params: &SpeciesParams<S>,
) -> Result<Vec<EulerianSnapshot<S>>, PicardError> {
    let grid = &sol.grid;
    let nn = grid.len();
    let n = params.n_species();
    let mut out = Vec::with_capacity(sol.trajectory.n_levels());
    for j in 0..sol.trajectory.n_levels() {
        // Lagrangian sample positions and fields
        let xs: Vec<S> = (0..nn)
            .map(|i| grid.x(i) + sol.flowmap.states[j].displacement[i])
            .collect();
        let mut rho_lag = vec![Vec::with_capacity(nn); n];
        for i in 0..nn {
            let h_i: Vec<S> = sol.trajectory.theta[j].iter().map(|f| f[i]).collect();
            let eta = sol.trajectory.sigma[j][i] + sol.frozen.rho0[i];
            let rhos = psi_inverse_point(eta, &h_i, params, i)?;
            for (k, r) in rhos.into_iter().enumerate() {
                rho_lag[k].push(r);
            }
        }
        let interp = |field: &[S], x: S| -> S {
            // xs is strictly increasing while the budget holds
            let mut lo = 0usize;
            let mut hi = nn - 1;
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if xs[mid] <= x {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
            field[lo] + t * (field[hi] - field[lo])
        };
        let mut rho_k = vec![Vec::with_capacity(nn); n];
        let mut u = Vec::with_capacity(nn);
        let mut h = vec![Vec::with_capacity(nn); n - 1];
        let mut pressure = Vec::with_capacity(nn);
        for i in 0..nn {
            let x = grid.x(i);
            let mut rhos_here = Vec::with_capacity(n);
            for k in 0..n {
                let val = interp(&rho_lag[k], x);
                rho_k[k].push(val);
                rhos_here.push(val);
            }
            u.push(interp(&sol.trajectory.v[j], x));
            for l in 0..n - 1 {
                h[l].push(interp(&sol.trajectory.theta[j][l], x));
            }
            pressure.push(thermo_point(&rhos_here, params).p);
        }
        out.push(EulerianSnapshot {
            t: S::from_usize(j).unwrap() * sol.dt,
            rho_k,
            u,
            h,
            pressure,
        });
    }
    Ok(out)
}

/// Run the fixed-point iteration with automatic horizon halving.
///
/// `t_horizon` is split into `n_steps` steps; halving the horizon keeps the
/// step count, so the step size shrinks along with it.
#[allow(clippy::too_many_arguments)]
pub fn run_fixed_point<S: Real>(
    initial: &PrimitiveState<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    grid: &Grid1d<S>,
    t_horizon: S,
    n_steps: usize,
    bounds: (S, S),
    cfg: &PicardConfig<S>,
) -> Result<(FixedPointSolution<S>, ContractionReport), PicardError> {
    let (a1, a2) = bounds;
    let frozen = crate::linear::freeze_coefficients(initial, params, model, a1, a2)?;
    check_compatibility(&frozen, grid)?;

    let mut t_cur = t_horizon;
    let mut halvings = 0usize;

    loop {
        let dt = t_cur / S::from_usize(n_steps).unwrap();
        let stepper = LinearStepper::new(
            frozen.clone(),
            params,
            grid.clone(),
            dt,
            n_steps,
            cfg.stepper,
        )?;

        match attempt_horizon(&stepper, params, model, cfg, dt)? {
            Attempt::Converged {
                trajectory,
                flowmap,
                mut report,
            } => {
                report.t_final = t_cur.f64();
                report.t_halvings = halvings;
                let residual =
                    nonlinear_residual(&trajectory, &flowmap, &frozen, params, model, grid)?;
                report.final_residual = residual.f64();
                report.converged = report.converged && residual <= cfg.res_tol;
                let rec = recover_and_check(&trajectory, &flowmap, &frozen, params, grid, a1, a2)?;
                report.mass_error = rec.mass_error;
                report.rho_bounds_ok = rec.rho_bounds_ok;
                report.positivity_floor = rec.positivity_floor;
                let sol = FixedPointSolution {
                    trajectory,
                    flowmap,
                    frozen,
                    grid: grid.clone(),
                    dt,
                    t_final: t_cur,
                };
                return Ok((sol, report));
            }
            Attempt::Retry(mut report) => {
                let t_next = t_cur * S::of(0.5);
                if t_next < cfg.t_min {
                    report.t_final = t_cur.f64();
                    report.t_halvings = halvings;
                    return Err(PicardError::NoContraction(Box::new(report)));
                }
                t_cur = t_next;
                halvings += 1;
            }
        }
    }
}

enum Attempt<S> {
    Converged {
        trajectory: Trajectory<S>,
        flowmap: FlowMapHistory<S>,
        report: ContractionReport,
    },
    Retry(ContractionReport),
}

fn attempt_horizon<S: Real>(
    stepper: &LinearStepper<S>,
    params: &SpeciesParams<S>,
    model: &CModel<S>,
    cfg: &PicardConfig<S>,
    dt: S,
) -> Result<Attempt<S>, PicardError> {
    let frozen = stepper.frozen();
    let grid = stepper.grid();
    let mut current = Trajectory::frozen_initial(frozen, stepper.n_steps(), dt);
    let mut ball: Option<S> = None;
    let mut d_hist: Vec<f64> = Vec::new();
    let mut q_hist: Vec<f64> = Vec::new();
    let mut diags: Vec<PicardDiagnostics> = Vec::new();

    let make_report = |d: &[f64],
                       q: &[f64],
                       diags: &[PicardDiagnostics],
                       converged: bool,
                       radius: Option<S>| ContractionReport {
        d: d.to_vec(),
        q: q.to_vec(),
        converged,
        iterations: d.len(),
        final_residual: f64::NAN,
        ball_radius: radius.map_or(f64::NAN, |b| b.f64()),
        t_final: f64::NAN,
        t_halvings: 0,
        diagnostics: diags.to_vec(),
        mass_error: f64::NAN,
        rho_bounds_ok: false,
        positivity_floor: f64::NAN,
    };

    for _iter in 0..cfg.max_iter {
        let step = picard_map(&current, stepper, params, model, cfg.delta, cfg.idx);
        let (next, fm, diag) = match step {
            Ok(x) => x,
            Err(PicardError::Lagrangian(LagrangianError::DeltaBudgetExceeded { .. })) => {
                return Ok(Attempt::Retry(make_report(
                    &d_hist, &q_hist, &diags, false, ball,
                )));
            }
            Err(e) => return Err(e),
        };
        let out_norm = S::of(diag.output_norm);
        let radius = *ball.get_or_insert(cfg.ball_factor * out_norm.max(S::of(1e-14)));
        if out_norm > radius {
            return Ok(Attempt::Retry(make_report(
                &d_hist, &q_hist, &diags, false, Some(radius),
            )));
        }
        let diff = next.sub(&current).norms(grid, cfg.idx).total;
        d_hist.push(diff);
        if d_hist.len() >= 2 {
            let prev = d_hist[d_hist.len() - 2];
            if prev > 0.0 {
                q_hist.push(diff / prev);
            }
        }
        diags.push(diag);

        if S::of(diff) < cfg.abs_tol {
            return Ok(Attempt::Converged {
                trajectory: next,
                flowmap: fm,
                report: make_report(&d_hist, &q_hist, &diags, true, ball),
            });
        }
        current = next;
        // divergence: two consecutive non-contracting ratios well above the
        // noise floor
        let len = q_hist.len();
        if len >= 2
            && q_hist[len - 1] >= 1.0
            && q_hist[len - 2] >= 1.0
            && S::of(d_hist[d_hist.len() - 1]) > cfg.abs_tol * S::of(100.0)
        {
            return Ok(Attempt::Retry(make_report(
                &d_hist, &q_hist, &diags, false, ball,
            )));
        }
    }
    Ok(Attempt::Retry(make_report(
        &d_hist, &q_hist, &diags, false, ball,
    )))
}
