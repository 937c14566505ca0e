//! Gauss–Laguerre quadrature and the matching Lagrange-mesh derivative.
//!
//! The rule integrates `p(x) e^{-x}` exactly on `[0, ∞)` for every polynomial
//! of degree `≤ 2N − 1`. Nodes are found by Newton iteration on the
//! three-term recurrence; the recurrence is carried with an `e^{-x/2}` factor
//! so the scaled weights `λ_k = w_k e^{x_k}` stay finite for large `N`.

use num_traits::Float;

/// Nodes and weights of an `N`-point Gauss–Laguerre rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLaguerre<T> {
    /// Roots of `L_N`, strictly increasing.
    pub nodes: Vec<T>,
    /// Weights for `∫ f(x) e^{-x} dx ≈ Σ w_k f(x_k)`.
    pub weights: Vec<T>,
    /// Scaled weights `w_k e^{x_k}` for `∫ g(x) dx ≈ Σ λ_k g(x_k)`.
    pub scaled_weights: Vec<T>,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("constant representable in scalar type")
}

/// `(L̃_N(x), L̃_{N-1}(x))` where `L̃_k = L_k e^{-x/2}`.
fn damped_laguerre_pair<T: Float>(n: usize, x: T) -> (T, T) {
    let damp = (-x / cast(2.0)).exp();
    let mut p_prev = T::zero();
    let mut p = damp;
    for k in 0..n {
        let kf: T = cast(k as f64);
        let next = ((cast::<T>(2.0) * kf + T::one() - x) * p - kf * p_prev) / (kf + T::one());
        p_prev = p;
        p = next;
    }
    (p, p_prev)
}

/// Evaluates the Laguerre polynomial `L_n(x)`.
pub fn laguerre<T: Float>(n: usize, x: T) -> T {
    let mut p_prev = T::zero();
    let mut p = T::one();
    for k in 0..n {
        let kf: T = cast(k as f64);
        let next = ((cast::<T>(2.0) * kf + T::one() - x) * p - kf * p_prev) / (kf + T::one());
        p_prev = p;
        p = next;
    }
    p
}

impl<T: Float> GaussLaguerre<T> {
    /// Builds the `n`-point rule. Panics if `n == 0`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Laguerre rule needs at least one node");
        let nf: f64 = n as f64;
        let mut nodes: Vec<T> = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut scaled = Vec::with_capacity(n);
        let eps = T::epsilon() * cast(16.0);

        let mut z = 0.0f64;
        for i in 0..n {
            // asymptotic starting guesses
            z = match i {
                0 => 3.0 / (1.0 + 2.4 * nf),
                1 => z + 15.0 / (1.0 + 2.5 * nf),
                _ => {
                    let ai = (i - 1) as f64;
                    let prev2 = nodes[i - 2].to_f64().unwrap();
                    z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - prev2)
                }
            };
            let mut x: T = cast(z);
            let mut deriv = T::one();
            for _ in 0..100 {
                let (p, p1) = damped_laguerre_pair(n, x);
                // derivative of L_N, damped by the same e^{-x/2}
                deriv = cast::<T>(nf) * (p - p1) / x;
                let step = p / deriv;
                x = x - step;
                if step.abs() <= eps * x.abs().max(T::one()) {
                    break;
                }
            }
            let (p, p1) = damped_laguerre_pair(n, x);
            if p != T::zero() {
                deriv = cast::<T>(nf) * (p - p1) / x;
            }
            let lambda = T::one() / (x * deriv * deriv);
            z = x.to_f64().unwrap();
            nodes.push(x);
            scaled.push(lambda);
            weights.push(lambda * (-x).exp());
        }
        Self {
            nodes,
            weights,
            scaled_weights: scaled,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_k f(x_k)`, approximating `∫₀^∞ f(x) e^{-x} dx`.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (&x, &w)| acc + w * f(x))
    }

    /// Derivative matrix of the normalised Lagrange functions
    /// `p_j(x) e^{-(x - x_j)/2}` sampled at the nodes, in the symmetric
    /// scaling where `Dᵀ D` is the quadratic form `∫ f' g' x dx`.
    ///
    /// Off-diagonal entries are `(-1)^{i+j} / (x_i - x_j)`, the diagonal is
    /// `-1 / (2 x_i)`.
    pub fn lagrange_derivative(&self) -> Vec<Vec<T>> {
        let n = self.len();
        let mut d = vec![vec![T::zero(); n]; n];
        for (k, row) in d.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = if k == j {
                    -T::one() / (cast::<T>(2.0) * self.nodes[j])
                } else {
                    let sign = if (k + j) % 2 == 0 { T::one() } else { -T::one() };
                    sign / (self.nodes[k] - self.nodes[j])
                };
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_node_rule() {
        let rule = GaussLaguerre::<f64>::new(1);
        assert_relative_eq!(rule.nodes[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(rule.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_node_rule_matches_closed_form() {
        let rule = GaussLaguerre::<f64>::new(2);
        let s = 2f64.sqrt();
        assert_relative_eq!(rule.nodes[0], 2.0 - s, epsilon = 1e-14);
        assert_relative_eq!(rule.nodes[1], 2.0 + s, epsilon = 1e-14);
        assert_relative_eq!(rule.weights[0], (2.0 + s) / 4.0, epsilon = 1e-14);
        assert_relative_eq!(rule.weights[1], (2.0 - s) / 4.0, epsilon = 1e-14);
    }

    #[test]
    fn nodes_are_roots_and_increasing() {
        for n in [3usize, 10, 24, 43, 80] {
            let rule = GaussLaguerre::<f64>::new(n);
            for w in rule.nodes.windows(2) {
                assert!(w[1] > w[0]);
            }
            for &x in &rule.nodes {
                let (p, p1) = damped_laguerre_pair(n, x);
                assert!(p.abs() < 1e-10 * p1.abs().max(1e-300), "n={n} x={x}");
            }
            assert!(rule.weights.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn single_precision_rule() {
        let rule = GaussLaguerre::<f32>::new(6);
        let sum: f32 = rule.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        // ∫ x^3 e^{-x} = 6
        let m3 = rule.integrate(|x| x * x * x);
        assert!((m3 - 6.0).abs() < 1e-4);
    }

    #[test]
    fn laguerre_values() {
        assert_relative_eq!(laguerre(2, 0.5f64), 1.0 - 1.0 + 0.125, epsilon = 1e-15);
        assert_relative_eq!(laguerre(0, 3.0f64), 1.0);
    }
}
