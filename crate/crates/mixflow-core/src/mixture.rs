//! Species-state algebra: model constants, primitive and entropic state
//! representations, Boyle-law thermodynamics, and the symmetrizing change of
//! variables between them.
//!
//! The entropic variables are `h_k = log(rho_{k+1})/m_{k+1} - log(rho_1)/m_1`
//! for `k = 1..n-1`; together with the total density they form the normal
//! state. The map is a diffeomorphism on positive densities. Its inverse has
//! no closed form and is computed per grid point by a safeguarded Newton
//! iteration on `rho_1` (the total density is strictly increasing in `rho_1`
//! once the other species are expressed through the entropic relations).

use crate::linalg::Mat;
use crate::scalar::Real;
use serde::Serialize;
use thiserror::Error;

/// States with any species density below this are rejected as inadmissible
/// rather than clamped.
pub const ADMISSIBLE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("invalid species parameters: {0}")]
    InvalidParams(String),
    #[error("non-positive density of species {species} at node {index}")]
    NonPositiveDensity { species: usize, index: usize },
    #[error("state inversion did not converge at node {index} (residual {residual:e})")]
    NoConvergence { index: usize, residual: f64 },
    #[error("field length mismatch: {0}")]
    ShapeMismatch(String),
}

/// Model constants: molar masses and viscosities.
#[derive(Debug, Clone)]
pub struct SpeciesParams<S> {
    m: Vec<S>,
    mu: S,
    nu: S,
}

impl<S: Real> SpeciesParams<S> {
    pub fn new(m: Vec<S>, mu: S, nu: S) -> Result<Self, MixtureError> {
        if m.len() < 2 {
            return Err(MixtureError::InvalidParams(format!(
                "need at least 2 species, got {}",
                m.len()
            )));
        }
        if m.iter().any(|&mk| mk <= S::zero()) {
            return Err(MixtureError::InvalidParams(
                "molar masses must be positive".into(),
            ));
        }
        if mu <= S::zero() || S::of(2.0) * mu + nu <= S::zero() {
            return Err(MixtureError::InvalidParams(
                "need mu > 0 and 2*mu + nu > 0".into(),
            ));
        }
        Ok(Self { m, mu, nu })
    }

    #[inline]
    pub fn n_species(&self) -> usize {
        self.m.len()
    }

    #[inline]
    pub fn molar_masses(&self) -> &[S] {
        &self.m
    }

    #[inline]
    pub fn m(&self, k: usize) -> S {
        self.m[k]
    }

    #[inline]
    pub fn mu(&self) -> S {
        self.mu
    }

    #[inline]
    pub fn nu(&self) -> S {
        self.nu
    }

    /// Coefficient of the 1-D viscous operator `mu*Lap + (mu+nu)*grad div`.
    #[inline]
    pub fn viscosity_1d(&self) -> S {
        S::of(2.0) * self.mu + self.nu
    }
}

/// Species densities and mixture velocity on a grid; `rho[k][i]` is species
/// `k` at node `i`.
#[derive(Debug, Clone)]
pub struct PrimitiveState<S> {
    pub rho: Vec<Vec<S>>,
    pub u: Vec<S>,
}

impl<S: Real> PrimitiveState<S> {
    pub fn new(rho: Vec<Vec<S>>, u: Vec<S>) -> Result<Self, MixtureError> {
        let len = u.len();
        if rho.is_empty() || rho.iter().any(|f| f.len() != len) {
            return Err(MixtureError::ShapeMismatch(
                "species fields must all match the velocity field length".into(),
            ));
        }
        Ok(Self { rho, u })
    }

    #[inline]
    pub fn n_species(&self) -> usize {
        self.rho.len()
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.u.len()
    }

    /// Species densities at one node.
    pub fn point(&self, i: usize) -> Vec<S> {
        self.rho.iter().map(|f| f[i]).collect()
    }

    /// Total density field.
    pub fn total_density(&self) -> Vec<S> {
        (0..self.n_nodes())
            .map(|i| self.rho.iter().map(|f| f[i]).sum())
            .collect()
    }

    fn check_admissible(&self) -> Result<(), MixtureError> {
        let floor = S::of(ADMISSIBLE_FLOOR);
        for (k, f) in self.rho.iter().enumerate() {
            for (i, &v) in f.iter().enumerate() {
                if v < floor {
                    return Err(MixtureError::NonPositiveDensity { species: k, index: i });
                }
            }
        }
        Ok(())
    }
}

/// Symmetrized unknowns: total density, entropic variables, velocity.
/// `h[k][i]` is the k-th entropic variable at node `i` (k = 0..n-2).
#[derive(Debug, Clone)]
pub struct NormalState<S> {
    pub rho: Vec<S>,
    pub h: Vec<Vec<S>>,
    pub u: Vec<S>,
}

impl<S: Real> NormalState<S> {
    pub fn h_point(&self, i: usize) -> Vec<S> {
        self.h.iter().map(|f| f[i]).collect()
    }
}

/// Pointwise thermodynamic quantities from the Boyle law.
#[derive(Debug, Clone)]
pub struct ThermoPoint<S> {
    /// Total pressure `sum_k rho_k / m_k`.
    pub p: S,
    /// Partial pressures `rho_k / m_k`.
    pub p_k: Vec<S>,
    /// Mass fractions `rho_k / rho`.
    pub y: Vec<S>,
    /// Molar-weighted density `sum_k m_k rho_k`.
    pub sigma_rho: S,
    /// Mean molar mass `rho / p`.
    pub m_bar: S,
}

/// Certified pointwise lower bound on species densities implied by bounded
/// entropic variables and a total-density floor.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// Certified floor per species (f64 diagnostics).
    pub species_floors: Vec<f64>,
    /// Minimum over species.
    pub floor: f64,
    /// Node indices where the hypotheses (|h_k| <= h_bound, rho >= rho_floor)
    /// fail on the supplied state.
    pub hypothesis_violations: Vec<usize>,
}

// --- pointwise kernels ---

/// Forward change of variables at one point: densities -> (rho, h).
pub fn psi_point<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> (S, Vec<S>) {
    let n = params.n_species();
    debug_assert_eq!(rhos.len(), n);
    let rho = rhos.iter().copied().sum();
    let lead = rhos[0].ln() / params.m(0);
    let h = (1..n)
        .map(|k| rhos[k].ln() / params.m(k) - lead)
        .collect();
    (rho, h)
}

/// Solve `r + sum_k c_k r^{e_k} = target` for `r > 0` by safeguarded Newton.
/// The left side is strictly increasing, so the root is unique.
fn solve_monotone_sum<S: Real>(
    coeff: &[S],
    expo: &[S],
    target: S,
) -> Result<S, f64> {
    let g = |r: S| -> S { r + coeff.iter().zip(expo).map(|(&c, &e)| c * r.powf(e)).sum::<S>() };
    let dg = |r: S| -> S {
        S::one()
            + coeff
                .iter()
                .zip(expo)
                .map(|(&c, &e)| c * e * r.powf(e - S::one()))
                .sum::<S>()
    };
    let tol = S::of(1e-13).max(S::epsilon() * S::of(10.0)) * target;
    let mut lo = S::zero();
    let mut hi = target; // g(r) >= r, so the root is at most `target`
    let mut x = target * S::of(0.5);
    let mut fx = g(x) - target;
    for _ in 0..100 {
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx > S::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / dg(x);
        x = if newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) * S::of(0.5)
        };
        fx = g(x) - target;
    }
    if fx.abs() <= tol {
        Ok(x)
    } else {
        Err(fx.abs().f64())
    }
}

/// Inverse change of variables at one point: (rho, h) -> densities.
pub fn psi_inverse_point<S: Real>(
    rho: S,
    h: &[S],
    params: &SpeciesParams<S>,
    index: usize,
) -> Result<Vec<S>, MixtureError> {
    let n = params.n_species();
    debug_assert_eq!(h.len(), n - 1);
    if rho <= S::zero() {
        return Err(MixtureError::NonPositiveDensity { species: 0, index });
    }
    // rho_{k+1} = exp(m_{k+1} h_k) * rho_1^{m_{k+1}/m_1}
    let coeff: Vec<S> = (1..n).map(|k| (params.m(k) * h[k - 1]).exp()).collect();
    let expo: Vec<S> = (1..n).map(|k| params.m(k) / params.m(0)).collect();
    let r1 = solve_monotone_sum(&coeff, &expo, rho)
        .map_err(|residual| MixtureError::NoConvergence { index, residual })?;
    let mut rhos = Vec::with_capacity(n);
    rhos.push(r1);
    for k in 1..n {
        rhos.push(coeff[k - 1] * r1.powf(expo[k - 1]));
    }
    Ok(rhos)
}

/// Boyle-law thermodynamics at one point.
pub fn thermo_point<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> ThermoPoint<S> {
    let rho: S = rhos.iter().copied().sum();
    let p_k: Vec<S> = rhos.iter().zip(params.molar_masses()).map(|(&r, &m)| r / m).collect();
    let p: S = p_k.iter().copied().sum();
    let y: Vec<S> = rhos.iter().map(|&r| r / rho).collect();
    let sigma_rho: S = rhos
        .iter()
        .zip(params.molar_masses())
        .map(|(&r, &m)| r * m)
        .sum();
    ThermoPoint {
        p,
        p_k,
        y,
        sigma_rho,
        m_bar: rho / p,
    }
}

/// Time-derivative weight matrix of the symmetrized species subsystem,
/// `R_kl = m_{k+1} rho_{k+1} delta_kl - m_{k+1} m_{l+1} rho_{k+1} rho_{l+1} / Sigma_rho`,
/// size (n-1)x(n-1).
pub fn relaxation_matrix<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> Mat<S> {
    let n = params.n_species();
    let sigma: S = rhos
        .iter()
        .zip(params.molar_masses())
        .map(|(&r, &m)| r * m)
        .sum();
    Mat::from_fn(n - 1, |k, l| {
        let diag = if k == l {
            params.m(k + 1) * rhos[k + 1]
        } else {
            S::zero()
        };
        diag - params.m(k + 1) * params.m(l + 1) * rhos[k + 1] * rhos[l + 1] / sigma
    })
}

/// Jacobian of the change of variables: gradients of (rho, h) are `A` times
/// gradients of the species densities.
pub fn jacobian_a<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> Mat<S> {
    let n = params.n_species();
    Mat::from_fn(n, |r, c| {
        if r == 0 {
            S::one()
        } else if c == 0 {
            -S::one() / (params.m(0) * rhos[0])
        } else if r == c {
            S::one() / (params.m(r) * rhos[r])
        } else {
            S::zero()
        }
    })
}

/// Closed-form inverse of [`jacobian_a`]; its lower-right block is the
/// relaxation matrix.
pub fn jacobian_a_inv<S: Real>(rhos: &[S], params: &SpeciesParams<S>) -> Mat<S> {
    let n = params.n_species();
    let sigma: S = rhos
        .iter()
        .zip(params.molar_masses())
        .map(|(&r, &m)| r * m)
        .sum();
    let w = |k: usize| params.m(k) * rhos[k];
    let relax = relaxation_matrix(rhos, params);
    Mat::from_fn(n, |r, c| {
        if r == 0 && c == 0 {
            w(0) / sigma
        } else if r == 0 {
            -w(0) * w(c) / sigma
        } else if c == 0 {
            w(r) / sigma
        } else {
            relax[(r - 1, c - 1)]
        }
    })
}

// --- grid operations ---

/// Forward change of variables on the whole grid.
pub fn psi_forward<S: Real>(
    state: &PrimitiveState<S>,
    params: &SpeciesParams<S>,
) -> Result<NormalState<S>, MixtureError> {
    state.check_admissible()?;
    let nn = state.n_nodes();
    let n = params.n_species();
    let mut rho = Vec::with_capacity(nn);
    let mut h = vec![Vec::with_capacity(nn); n - 1];
    for i in 0..nn {
        let (r, hi) = psi_point(&state.point(i), params);
        rho.push(r);
        for (k, v) in hi.into_iter().enumerate() {
            h[k].push(v);
        }
    }
    Ok(NormalState {
        rho,
        h,
        u: state.u.clone(),
    })
}

/// Inverse change of variables on the whole grid.
pub fn psi_inverse<S: Real>(
    normal: &NormalState<S>,
    params: &SpeciesParams<S>,
) -> Result<PrimitiveState<S>, MixtureError> {
    let nn = normal.rho.len();
    let n = params.n_species();
    let mut rho = vec![Vec::with_capacity(nn); n];
    for i in 0..nn {
        let rhos = psi_inverse_point(normal.rho[i], &normal.h_point(i), params, i)?;
        for (k, v) in rhos.into_iter().enumerate() {
            rho[k].push(v);
        }
    }
    Ok(PrimitiveState {
        rho,
        u: normal.u.clone(),
    })
}

/// Boyle-law thermodynamics on the whole grid.
pub fn thermo_eval<S: Real>(
    state: &PrimitiveState<S>,
    params: &SpeciesParams<S>,
) -> Result<Vec<ThermoPoint<S>>, MixtureError> {
    state.check_admissible()?;
    Ok((0..state.n_nodes())
        .map(|i| thermo_point(&state.point(i), params))
        .collect())
}

/// Certified species floor implied by `|h_k| <= h_bound` and
/// `rho >= rho_floor`, with per-node hypothesis checks on the given state.
///
/// If `rho_1` dropped below the reported floor while every `|h_k| <= h_bound`,
/// the total density implied by the entropic relations would fall below
/// `rho_floor`; the other species inherit floors through those relations.
pub fn check_lower_bound<S: Real>(
    normal: &NormalState<S>,
    params: &SpeciesParams<S>,
    h_bound: S,
    rho_floor: S,
) -> Result<BoundReport, MixtureError> {
    let n = params.n_species();
    let coeff: Vec<S> = (1..n).map(|k| (params.m(k) * h_bound).exp()).collect();
    let expo: Vec<S> = (1..n).map(|k| params.m(k) / params.m(0)).collect();
    let r1 = solve_monotone_sum(&coeff, &expo, rho_floor)
        .map_err(|residual| MixtureError::NoConvergence { index: 0, residual })?;
    let mut species_floors = vec![r1.f64()];
    for k in 1..n {
        let f = (-params.m(k) * h_bound).exp() * r1.powf(expo[k - 1]);
        species_floors.push(f.f64());
    }
    let floor = species_floors.iter().copied().fold(f64::INFINITY, f64::min);

    let mut hypothesis_violations = Vec::new();
    for i in 0..normal.rho.len() {
        let h_ok = normal.h.iter().all(|f| f[i].abs() <= h_bound);
        let rho_ok = normal.rho[i] >= rho_floor;
        if !(h_ok && rho_ok) {
            hypothesis_violations.push(i);
        }
    }
    Ok(BoundReport {
        species_floors,
        floor,
        hypothesis_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn params2(m1: f64, m2: f64) -> SpeciesParams<f64> {
        SpeciesParams::new(vec![m1, m2], 1.0, 0.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SpeciesParams::new(vec![1.0], 1.0, 0.0).is_err());
        assert!(SpeciesParams::new(vec![1.0, -2.0], 1.0, 0.0).is_err());
        assert!(SpeciesParams::new(vec![1.0, 2.0], 0.0, 1.0).is_err());
        assert!(SpeciesParams::new(vec![1.0, 2.0], 1.0, -3.0).is_err());
        assert!(SpeciesParams::new(vec![1.0, 2.0], 1.0, -1.5).is_ok());
    }

    #[test]
    fn psi_point_examples() {
        // equal densities, equal masses: zero log ratio
        let (rho, h) = psi_point(&[1.0, 1.0], &params2(1.0, 1.0));
        assert_relative_eq!(rho, 2.0);
        assert_relative_eq!(h[0], 0.0);

        // hand evaluation: m = (1,2), rho = (1, e^2) -> h1 = 2/2 - 0 = 1
        let e2 = std::f64::consts::E.powi(2);
        let (rho, h) = psi_point(&[1.0, e2], &params2(1.0, 2.0));
        assert_relative_eq!(rho, 1.0 + e2);
        assert_relative_eq!(h[0], 1.0, epsilon = 1e-14);

        // symmetry: three equal species
        let p3 = SpeciesParams::new(vec![1.0, 1.0, 1.0], 1.0, 0.0).unwrap();
        for a in [0.3, 1.0, 7.5] {
            let (_, h) = psi_point(&[a, a, a], &p3);
            assert_relative_eq!(h[0], 0.0);
            assert_relative_eq!(h[1], 0.0);
        }
    }

    #[test]
    fn psi_inverse_point_examples() {
        let rhos = psi_inverse_point(2.0, &[0.0], &params2(1.0, 1.0), 0).unwrap();
        assert_relative_eq!(rhos[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(rhos[1], 1.0, epsilon = 1e-12);

        let e2 = std::f64::consts::E.powi(2);
        let rhos = psi_inverse_point(1.0 + e2, &[1.0], &params2(1.0, 2.0), 0).unwrap();
        assert_relative_eq!(rhos[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(rhos[1], e2, epsilon = 1e-10, max_relative = 1e-10);
    }

    #[test]
    fn psi_round_trip_randomized() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            let n = *[2usize, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let params = SpeciesParams::new(m, 1.0, 0.0).unwrap();
            let rhos: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();

            let (rho, h) = psi_point(&rhos, &params);
            let back = psi_inverse_point(rho, &h, &params, 0).unwrap();
            for (a, b) in rhos.iter().zip(&back) {
                assert_relative_eq!(a, b, max_relative = 1e-10);
            }
            // and the other composition order
            let (rho2, h2) = psi_point(&back, &params);
            assert_relative_eq!(rho, rho2, max_relative = 1e-10);
            for (a, b) in h.iter().zip(&h2) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn thermo_examples() {
        let t = thermo_point(&[1.0, 1.0], &params2(1.0, 1.0));
        assert_relative_eq!(t.p, 2.0);
        assert_relative_eq!(t.y[0], 0.5);
        assert_relative_eq!(t.y[1], 0.5);
        assert_relative_eq!(t.sigma_rho, 2.0);
        assert_relative_eq!(t.m_bar, 1.0);

        let t = thermo_point(&[2.0, 4.0], &params2(2.0, 4.0));
        assert_relative_eq!(t.p, 2.0);
        assert_relative_eq!(t.y[0], 1.0 / 3.0);
        assert_relative_eq!(t.y[1], 2.0 / 3.0);
        assert_relative_eq!(t.sigma_rho, 20.0);
        assert_relative_eq!(t.m_bar, 3.0);

        // equal molar masses reduce to a single gas: p = rho/m, m_bar = m
        let p3 = SpeciesParams::new(vec![2.5, 2.5, 2.5], 1.0, 0.0).unwrap();
        let t = thermo_point(&[0.4, 1.1, 2.0], &p3);
        assert_relative_eq!(t.p, 3.5 / 2.5, epsilon = 1e-14);
        assert_relative_eq!(t.m_bar, 2.5, epsilon = 1e-14);
        assert_relative_eq!(t.y.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn jacobian_inverse_identity() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..500 {
            let n = *[2usize, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let params = SpeciesParams::new(m, 1.0, 0.0).unwrap();
            let rhos: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
            let a = jacobian_a(&rhos, &params);
            let ainv = jacobian_a_inv(&rhos, &params);
            let prod = a.matmul(&ainv);
            let err = prod.sub(&Mat::identity(n)).max_abs();
            assert!(err < 1e-12, "A A^-1 deviates from I by {err}");
        }
    }

    #[test]
    fn admissibility_floor_rejects() {
        let params = params2(1.0, 1.0);
        let state = PrimitiveState::new(vec![vec![1.0, 1e-13], vec![1.0, 1.0]], vec![0.0, 0.0])
            .unwrap();
        match psi_forward(&state, &params) {
            Err(MixtureError::NonPositiveDensity { species: 0, index: 1 }) => {}
            other => panic!("expected NonPositiveDensity, got {other:?}"),
        }
    }

    #[test]
    fn lower_bound_equal_split() {
        // h_bound = 0 with equal masses forces an equal split
        let params = params2(1.0, 1.0);
        let normal = NormalState {
            rho: vec![2.0, 2.5],
            h: vec![vec![0.0, 0.0]],
            u: vec![0.0, 0.0],
        };
        let rep = check_lower_bound(&normal, &params, 0.0, 2.0).unwrap();
        assert_relative_eq!(rep.floor, 1.0, epsilon = 1e-12);
        assert!(rep.hypothesis_violations.is_empty());
    }

    #[test]
    fn lower_bound_is_sound_on_random_states() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..300 {
            let n = *[2usize, 3, 5].iter().nth(rng.gen_range(0..3)).unwrap();
            let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
            let params = SpeciesParams::new(m, 1.0, 0.0).unwrap();
            let nodes = 9;
            let rho: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..nodes).map(|_| rng.gen_range(0.1..10.0)).collect())
                .collect();
            let state = PrimitiveState::new(rho.clone(), vec![0.0; nodes]).unwrap();
            let normal = psi_forward(&state, &params).unwrap();

            let h_bound = normal
                .h
                .iter()
                .flat_map(|f| f.iter().map(|v| v.abs()))
                .fold(0.0, f64::max);
            let rho_floor = normal.rho.iter().copied().fold(f64::INFINITY, f64::min);
            let rep = check_lower_bound(&normal, &params, h_bound, rho_floor).unwrap();
            assert!(rep.hypothesis_violations.is_empty());

            let actual_min = rho
                .iter()
                .flat_map(|f| f.iter().copied())
                .fold(f64::INFINITY, f64::min);
            assert!(
                rep.floor <= actual_min + 1e-12,
                "certified floor {} exceeds actual minimum {}",
                rep.floor,
                actual_min
            );
        }
    }

    #[test]
    fn inversion_overflow_reports_no_convergence() {
        // an absurd entropic value overflows the species reconstruction;
        // the solver must report failure instead of panicking
        let params = params2(1.0, 1.0);
        match psi_inverse_point(2.0, &[1e9], &params, 3) {
            Err(MixtureError::NoConvergence { index: 3, .. }) => {}
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn lower_bound_flags_vanishing_species() {
        // one species heading to zero with bounded total density: h blows up
        let params = params2(1.0, 1.0);
        let state =
            PrimitiveState::new(vec![vec![2.0, 1e-9], vec![1.0, 3.0]], vec![0.0, 0.0]).unwrap();
        let normal = psi_forward(&state, &params).unwrap();
        let rep = check_lower_bound(&normal, &params, 2.0, 1.0).unwrap();
        assert_eq!(rep.hypothesis_violations, vec![1]);
    }
}
