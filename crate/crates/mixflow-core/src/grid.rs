//! Uniform 1-D node-centered grid on [0, 1] with boundary nodes included.
//!
//! Nodes are `x_i = i*h` for `i = 0..=n_interior+1` with `h = 1/(n_interior+1)`.
//! Fields are plain `Vec<S>` of length [`Grid1d::len`]. Quadrature weights are
//! trapezoidal (half weight at the two boundary nodes), which matches the
//! half-cells of the vertex-centered flux discretization used by the solver.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Grid1d<S> {
    n_interior: usize,
    h: S,
}

impl<S: Real> Grid1d<S> {
    pub fn new(n_interior: usize) -> Self {
        assert!(n_interior >= 3, "grid needs at least 3 interior nodes");
        let h = S::one() / S::from_usize(n_interior + 1).unwrap();
        Self { n_interior, h }
    }

    /// Total number of nodes including the two boundary nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_interior + 2
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    #[inline]
    pub fn h(&self) -> S {
        self.h
    }

    #[inline]
    pub fn x(&self, i: usize) -> S {
        S::from_usize(i).unwrap() * self.h
    }

    pub fn nodes(&self) -> Vec<S> {
        (0..self.len()).map(|i| self.x(i)).collect()
    }

    /// Trapezoidal quadrature weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> S {
        if i == 0 || i == self.len() - 1 {
            self.h / S::of(2.0)
        } else {
            self.h
        }
    }

    /// Evaluate a function on every node.
    pub fn sample<F: Fn(S) -> S>(&self, f: F) -> Vec<S> {
        (0..self.len()).map(|i| f(self.x(i))).collect()
    }

    pub fn zeros(&self) -> Vec<S> {
        vec![S::zero(); self.len()]
    }

    /// First derivative: central in the interior, second-order one-sided at
    /// the boundary nodes.
    pub fn deriv(&self, f: &[S]) -> Vec<S> {
        debug_assert_eq!(f.len(), self.len());
        let m = self.len();
        let two_h = S::of(2.0) * self.h;
        let mut out = vec![S::zero(); m];
        out[0] = (-S::of(3.0) * f[0] + S::of(4.0) * f[1] - f[2]) / two_h;
        for i in 1..m - 1 {
            out[i] = (f[i + 1] - f[i - 1]) / two_h;
        }
        out[m - 1] = (S::of(3.0) * f[m - 1] - S::of(4.0) * f[m - 2] + f[m - 3]) / two_h;
        out
    }

    /// Second derivative: central in the interior, second-order one-sided at
    /// the boundary nodes.
    pub fn second_deriv(&self, f: &[S]) -> Vec<S> {
        debug_assert_eq!(f.len(), self.len());
        let m = self.len();
        let h2 = self.h * self.h;
        let mut out = vec![S::zero(); m];
        out[0] = (S::of(2.0) * f[0] - S::of(5.0) * f[1] + S::of(4.0) * f[2] - f[3]) / h2;
        for i in 1..m - 1 {
            out[i] = (f[i + 1] - S::of(2.0) * f[i] + f[i - 1]) / h2;
        }
        out[m - 1] =
            (S::of(2.0) * f[m - 1] - S::of(5.0) * f[m - 2] + S::of(4.0) * f[m - 3] - f[m - 4]) / h2;
        out
    }

    /// Discrete divergence of a velocity field: central in the interior and
    /// one-sided `(v_1 - v_0)/h`, `(v_{M-1} - v_{M-2})/h` at the boundary
    /// nodes. With homogeneous Dirichlet velocity and the trapezoidal weights
    /// this operator is the exact negative adjoint of the central gradient,
    /// which is what the discrete energy balance of the solver relies on.
    pub fn div(&self, v: &[S]) -> Vec<S> {
        debug_assert_eq!(v.len(), self.len());
        let m = self.len();
        let two_h = S::of(2.0) * self.h;
        let mut out = vec![S::zero(); m];
        out[0] = (v[1] - v[0]) / self.h;
        for i in 1..m - 1 {
            out[i] = (v[i + 1] - v[i - 1]) / two_h;
        }
        out[m - 1] = (v[m - 1] - v[m - 2]) / self.h;
        out
    }

    /// One-sided second-order boundary derivative dotted with the outward
    /// normal: `(left, right)` with normals -1 and +1.
    pub fn boundary_normal_deriv(&self, f: &[S]) -> (S, S) {
        debug_assert_eq!(f.len(), self.len());
        let m = self.len();
        let two_h = S::of(2.0) * self.h;
        let left = -(-S::of(3.0) * f[0] + S::of(4.0) * f[1] - f[2]) / two_h;
        let right = (S::of(3.0) * f[m - 1] - S::of(4.0) * f[m - 2] + f[m - 3]) / two_h;
        (left, right)
    }

    /// Trapezoidal integral over [0, 1].
    pub fn integrate(&self, f: &[S]) -> S {
        debug_assert_eq!(f.len(), self.len());
        f.iter()
            .enumerate()
            .map(|(i, &v)| self.weight(i) * v)
            .sum()
    }

    /// Discrete L_q norm, `q >= 1` (trapezoidal quadrature).
    pub fn norm_lq(&self, f: &[S], q: f64) -> S {
        let q_s = S::of(q);
        let sum: S = f
            .iter()
            .enumerate()
            .map(|(i, &v)| self.weight(i) * v.abs().powf(q_s))
            .sum();
        sum.powf(S::one() / q_s)
    }

    /// Max-norm over nodes.
    pub fn norm_inf(&self, f: &[S]) -> S {
        f.iter().fold(S::zero(), |a, &v| a.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn derivatives_are_second_order() {
        let f = |x: f64| (2.5 * x).sin();
        let df = |x: f64| 2.5 * (2.5 * x).cos();
        let d2f = |x: f64| -6.25 * (2.5 * x).sin();

        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid1d::<f64>::new(n);
            let fv = g.sample(f);
            let d = g.deriv(&fv);
            let d2 = g.second_deriv(&fv);
            let e1 = (0..g.len())
                .map(|i| (d[i] - df(g.x(i))).abs())
                .fold(0.0, f64::max);
            let e2 = (0..g.len())
                .map(|i| (d2[i] - d2f(g.x(i))).abs())
                .fold(0.0, f64::max);
            errs.push((e1, e2));
        }
        for w in errs.windows(2) {
            let r1 = (w[0].0 / w[1].0).log2();
            let r2 = (w[0].1 / w[1].1).log2();
            assert!(r1 > 1.8, "first-derivative order too low: {r1}");
            assert!(r2 > 1.5, "second-derivative order too low: {r2}");
        }
    }

    #[test]
    fn quadrature_integrates_quadratics_exactly_enough() {
        let g = Grid1d::<f64>::new(63);
        let f = g.sample(|x| x * x);
        // trapezoid error for x^2 on a uniform grid is h^2/6 exactly
        let h = g.h();
        assert_relative_eq!(g.integrate(&f), 1.0 / 3.0 + h * h / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn div_adjointness_against_central_gradient() {
        // <v, D_c s> + <s, div v> = 0 with v zero on the boundary nodes
        let g = Grid1d::<f64>::new(41);
        let mut v = g.sample(|x| (std::f64::consts::PI * x).sin() * (1.3 + x));
        let m = g.len();
        v[0] = 0.0;
        v[m - 1] = 0.0;
        let s = g.sample(|x| (3.0 * x).cos() + 0.3 * x);
        let ds = g.deriv(&s);
        let dv = g.div(&v);
        // central gradient of s only enters at interior nodes (momentum rows)
        let a: f64 = (1..m - 1).map(|i| g.weight(i) * v[i] * ds[i]).sum();
        let b: f64 = (0..m).map(|i| g.weight(i) * s[i] * dv[i]).sum();
        assert_relative_eq!(a + b, 0.0, epsilon = 1e-13);
    }
}
