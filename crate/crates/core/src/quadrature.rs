//! Adaptive Gauss–Legendre quadrature for vector-valued integrands.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if dp == 0.0 {
            dp = legendre(n, x).1;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integral<const K: usize> {
    pub value: [f64; K],
    /// Largest accepted local discrepancy relative to the global magnitude.
    pub achieved_tol: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Adaptive integrator with a fixed-order rule and interval bisection.
#[derive(Debug, Clone)]
pub struct Integrator {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    pub rel_tol: f64,
    pub max_depth: usize,
}

impl Integrator {
    pub fn new(order: usize, rel_tol: f64) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self {
            nodes,
            weights,
            rel_tol,
            max_depth: 40,
        }
    }

    fn rule<const K: usize>(&self, f: &mut impl FnMut(f64) -> [f64; K], a: f64, b: f64, evals: &mut usize) -> [f64; K] {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = [0.0; K];
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(mid + half * x);
            for k in 0..K {
                acc[k] += w * v[k];
            }
        }
        *evals += self.nodes.len();
        acc.map(|v| v * half)
    }

    /// Integrates over the consecutive pieces `[breaks[0], breaks[1]], ...`.
    pub fn integrate<const K: usize>(&self, mut f: impl FnMut(f64) -> [f64; K], breaks: &[f64]) -> Integral<K> {
        let mut evals = 0;
        let total_width: f64 = breaks.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let mut coarse = [0.0; K];
        for w in breaks.windows(2) {
            let v = self.rule(&mut f, w[0], w[1], &mut evals);
            for k in 0..K {
                coarse[k] += v[k];
            }
        }
        let scale = coarse.map(|v| v.abs().max(1e-14));
        let mut out = Integral {
            value: [0.0; K],
            achieved_tol: 0.0,
            converged: true,
            evaluations: 0,
        };
        if total_width == 0.0 {
            return out;
        }
        for w in breaks.windows(2) {
            let whole = self.rule(&mut f, w[0], w[1], &mut evals);
            self.refine(&mut f, w[0], w[1], whole, &scale, total_width, 0, &mut out, &mut evals);
        }
        out.evaluations = evals;
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<const K: usize>(
        &self,
        f: &mut impl FnMut(f64) -> [f64; K],
        a: f64,
        b: f64,
        whole: [f64; K],
        scale: &[f64; K],
        total_width: f64,
        depth: usize,
        out: &mut Integral<K>,
        evals: &mut usize,
    ) {
        let mid = 0.5 * (a + b);
        let left = self.rule(f, a, mid, evals);
        let right = self.rule(f, mid, b, evals);
        let share = (b - a).abs() / total_width;
        let mut worst: f64 = 0.0;
        for k in 0..K {
            let diff = (left[k] + right[k] - whole[k]).abs();
            worst = worst.max(diff / (scale[k] * share.max(f64::MIN_POSITIVE)));
        }
        if worst <= self.rel_tol || depth >= self.max_depth {
            if worst > self.rel_tol {
                out.converged = false;
            }
            for k in 0..K {
                out.value[k] += left[k] + right[k];
            }
            out.achieved_tol = out.achieved_tol.max(worst * share);
            return;
        }
        self.refine(f, a, mid, left, scale, total_width, depth + 1, out, evals);
        self.refine(f, mid, b, right, scale, total_width, depth + 1, out, evals);
    }
}
