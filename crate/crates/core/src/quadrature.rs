//! Composite Gauss–Legendre quadrature.
//!
//! Every integral the engine needs (Gram reconstruction, penalty matrices
//! under Fourier extension, density normalization, integrated squared error)
//! is a smooth or piecewise smooth integrand on a bounded interval, so a
//! composite rule of fixed-order panels is used throughout. Trigonometric
//! integrands need a node count proportional to their frequency; callers
//! size rules with [`node_count`].

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Nodes per panel of the composite rule.
pub const PANEL_ORDER: usize = 16;

/// Maximum number of node doublings attempted by [`integrate_converged`].
const MAX_DOUBLINGS: usize = 10;

/// A Gauss–Legendre rule on the reference interval `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `order`-point rule by Newton iteration on the Legendre
    /// three-term recurrence.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi's initial guess for the i-th root (descending order).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]` with this rule.
    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }
}

/// Value and derivative of the Legendre polynomial `P_n` at `x`.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_ORDER))
}

/// Node count used for integrands built from `q` regression and `p` density
/// basis functions.
pub fn node_count(q: usize, p: usize) -> usize {
    512.max(8 * (q + p))
}

/// Composite Gauss–Legendre rule on `[lo, hi]` made of equal panels.
#[derive(Debug, Clone)]
pub struct CompositeRule {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl CompositeRule {
    /// Builds a rule with at least `min_nodes` nodes (rounded up to whole panels).
    pub fn new(lo: f64, hi: f64, min_nodes: usize) -> Self {
        assert!(lo < hi, "quadrature interval must satisfy lo < hi");
        let panels = min_nodes.div_ceil(PANEL_ORDER).max(1);
        Self::with_panels(lo, hi, panels)
    }

    pub fn with_panels(lo: f64, hi: f64, panels: usize) -> Self {
        let base = panel_rule();
        let width = (hi - lo) / panels as f64;
        let half = 0.5 * width;
        let mut nodes = Vec::with_capacity(panels * PANEL_ORDER);
        let mut weights = Vec::with_capacity(panels * PANEL_ORDER);
        for k in 0..panels {
            let mid = lo + (k as f64 + 0.5) * width;
            for (x, w) in base.nodes().iter().zip(base.weights()) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        Self { lo, hi, nodes, weights }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Rule on `[lo, hi]` whose panels never straddle the given interior
    /// breakpoints, so integrands with kinks there converge at full order.
    /// Panels are distributed in proportion to segment length.
    pub fn with_breakpoints(lo: f64, hi: f64, breakpoints: &[f64], min_nodes: usize) -> Self {
        let mut edges = vec![lo];
        let mut inner: Vec<f64> = breakpoints.iter().copied().filter(|b| *b > lo && *b < hi).collect();
        inner.sort_by(f64::total_cmp);
        edges.extend(inner);
        edges.push(hi);
        let panels = min_nodes.div_ceil(PANEL_ORDER).max(1);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in edges.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if b <= a {
                continue;
            }
            let k = ((panels as f64 * (b - a) / (hi - lo)).ceil() as usize).max(1);
            let part = Self::with_panels(a, b, k);
            nodes.extend(part.nodes);
            weights.extend(part.weights);
        }
        Self { lo, hi, nodes, weights }
    }

    /// The same interval with twice as many panels.
    pub fn refined(&self) -> Self {
        Self::with_panels(self.lo, self.hi, 2 * self.len() / PANEL_ORDER)
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let mut sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(*x);
        }
        sum
    }
}

/// Integrates `f` over `[lo, hi]`, doubling the node count until two
/// successive estimates agree to `tol` (absolute, scaled by `max(1, |I|)`).
pub fn integrate_converged<F: FnMut(f64) -> f64>(
    lo: f64,
    hi: f64,
    min_nodes: usize,
    tol: f64,
    mut f: F,
) -> Result<f64> {
    let mut rule = CompositeRule::new(lo, hi, min_nodes);
    let mut prev = rule.integrate(&mut f);
    for _ in 0..MAX_DOUBLINGS {
        rule = rule.refined();
        let next = rule.integrate(&mut f);
        if (next - prev).abs() <= tol * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::Numerical(format!(
        "quadrature on [{lo}, {hi}] did not settle to {tol:e} after {MAX_DOUBLINGS} doublings"
    )))
}
