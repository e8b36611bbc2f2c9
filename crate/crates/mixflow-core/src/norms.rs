//! Discrete surrogates of the parabolic solution norms and the reflect-in-time
//! extension operator.
//!
//! For a field series sampled at `t_j = j*dt` the time integrals are composite
//! midpoint sums over the steps: spatial norms are evaluated on the step
//! midpoint average `(f^j + f^{j+1})/2` and time derivatives as the exact
//! difference quotient of the step. With `p = 2` this makes each norm exactly
//! additive over a partition of the horizon at a sample node, which is what
//! the partition consistency checks rely on.
//!
//! Norm structure (defaults `p = q = 2`):
//! - velocity-type: `[f]_{T,1}^p = int_0^T (||f||_{H2_q}^p + ||df/dt||_{Lq}^p) dt`
//! - density-type: `[s]_{T,2}^p = int_0^T (||s||_{H1_q}^p + ||ds/dt||_{H1_q}^p) dt`
//! - total: plain sum of the velocity norm, the density norm and the
//!   per-component entropic norms.

use crate::grid::Grid1d;
use crate::scalar::Real;
use serde::Serialize;

/// Integrability indices of the discrete norms.
#[derive(Debug, Clone, Copy)]
pub struct NormIndices {
    pub p: f64,
    pub q: f64,
}

impl Default for NormIndices {
    fn default() -> Self {
        Self { p: 2.0, q: 2.0 }
    }
}

/// `(||f||_q^q + ||f'||_q^q + ||f''||_q^q)^{1/q}` with difference quotients.
pub fn h2_norm<S: Real>(f: &[S], grid: &Grid1d<S>, q: f64) -> S {
    let d1 = grid.deriv(f);
    let d2 = grid.second_deriv(f);
    lq_combine(
        &[grid.norm_lq(f, q), grid.norm_lq(&d1, q), grid.norm_lq(&d2, q)],
        q,
    )
}

/// `(||f||_q^q + ||f'||_q^q)^{1/q}` with difference quotients.
pub fn h1_norm<S: Real>(f: &[S], grid: &Grid1d<S>, q: f64) -> S {
    let d1 = grid.deriv(f);
    lq_combine(&[grid.norm_lq(f, q), grid.norm_lq(&d1, q)], q)
}

fn lq_combine<S: Real>(parts: &[S], q: f64) -> S {
    let qs = S::of(q);
    parts
        .iter()
        .map(|&v| v.powf(qs))
        .sum::<S>()
        .powf(S::one() / qs)
}

fn midpoint<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x + y) * S::of(0.5))
        .collect()
}

fn dquot<S: Real>(a: &[S], b: &[S], dt: S) -> Vec<S> {
    a.iter().zip(b).map(|(&x, &y)| (y - x) / dt).collect()
}

/// Velocity-type trajectory norm `[f]_{T,1}` of a field series.
pub fn series_norm_t1<S: Real>(
    series: &[Vec<S>],
    grid: &Grid1d<S>,
    dt: S,
    idx: NormIndices,
) -> S {
    let ps = S::of(idx.p);
    let mut acc = S::zero();
    for w in series.windows(2) {
        let mid = midpoint(&w[0], &w[1]);
        let rate = dquot(&w[0], &w[1], dt);
        acc += dt
            * (h2_norm(&mid, grid, idx.q).powf(ps) + grid.norm_lq(&rate, idx.q).powf(ps));
    }
    acc.powf(S::one() / ps)
}

/// Density-type trajectory norm `[s]_{T,2}` of a field series.
pub fn series_norm_t2<S: Real>(
    series: &[Vec<S>],
    grid: &Grid1d<S>,
    dt: S,
    idx: NormIndices,
) -> S {
    let ps = S::of(idx.p);
    let mut acc = S::zero();
    for w in series.windows(2) {
        let mid = midpoint(&w[0], &w[1]);
        let rate = dquot(&w[0], &w[1], dt);
        acc += dt * (h1_norm(&mid, grid, idx.q).powf(ps) + h1_norm(&rate, grid, idx.q).powf(ps));
    }
    acc.powf(S::one() / ps)
}

/// The component norms of a trajectory and their sum.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryNorms {
    pub v: f64,
    pub sigma: f64,
    pub theta: Vec<f64>,
    pub total: f64,
}

impl TrajectoryNorms {
    pub fn compute<S: Real>(
        sigma: &[Vec<S>],
        v: &[Vec<S>],
        theta: &[Vec<Vec<S>>],
        grid: &Grid1d<S>,
        dt: S,
        idx: NormIndices,
    ) -> Self {
        let v_norm = series_norm_t1(v, grid, dt, idx).f64();
        let s_norm = series_norm_t2(sigma, grid, dt, idx).f64();
        let theta_norms: Vec<f64> = theta
            .iter()
            .map(|series| series_norm_t1(series, grid, dt, idx).f64())
            .collect();
        let total = v_norm + s_norm + theta_norms.iter().sum::<f64>();
        Self {
            v: v_norm,
            sigma: s_norm,
            theta: theta_norms,
            total,
        }
    }
}

/// Reflect-in-time extension of a sampled signal: the value on `(T, 2T)` is
/// the reflection `f(2T - t)`, zero outside `[0, 2T]`. Evaluation between
/// samples is piecewise linear. The reflection is continuous at `T`; a signal
/// with `f(0) != 0` is discontinuous at `0` and `2T` by construction.
#[derive(Debug, Clone)]
pub struct ExtendedField<S> {
    samples: Vec<S>,
    dt: S,
}

impl<S: Real> ExtendedField<S> {
    pub fn new(samples: Vec<S>, dt: S) -> Self {
        assert!(samples.len() >= 2);
        Self { samples, dt }
    }

    pub fn horizon(&self) -> S {
        self.dt * S::from_usize(self.samples.len() - 1).unwrap()
    }

    fn interp(&self, t: S) -> S {
        let pos = t / self.dt;
        let j = pos.floor().max(S::zero()).f64() as usize;
        let j = j.min(self.samples.len() - 2);
        let frac = pos - S::from_usize(j).unwrap();
        self.samples[j] + frac * (self.samples[j + 1] - self.samples[j])
    }

    pub fn eval(&self, t: S) -> S {
        let big_t = self.horizon();
        if t < S::zero() || t > S::of(2.0) * big_t {
            S::zero()
        } else if t <= big_t {
            self.interp(t)
        } else {
            self.interp(S::of(2.0) * big_t - t)
        }
    }
}
