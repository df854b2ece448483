//! Five-point Gauss–Legendre rule, exact for polynomials of degree nine.

const NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];

const WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

/// Nodes and weights mapped onto `[a, b]`.
pub fn gauss5(a: f64, b: f64) -> [(f64, f64); 5] {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    std::array::from_fn(|k| (mid + half * NODES[k], half * WEIGHTS[k]))
}

/// Composite rule with `n` Gauss points per panel on `m` equal panels.
/// Used by tests as a refinement oracle.
pub fn composite_gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            gauss5(a + k as f64 * h, a + (k + 1) as f64 * h)
                .iter()
                .map(|&(x, w)| w * f(x))
                .sum::<f64>()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_through_degree_nine() {
        for deg in 0..=9 {
            let q: f64 = gauss5(0.0, 2.0).iter().map(|&(x, w)| w * x.powi(deg)).sum();
            let exact = 2f64.powi(deg + 1) / (deg + 1) as f64;
            assert!((q - exact).abs() < 1e-12 * exact.max(1.0), "degree {deg}");
        }
    }

    #[test]
    fn composite_integrates_sine() {
        let q = composite_gauss_legendre(|t| (std::f64::consts::PI * t).sin(), 0.0, 1.0, 4);
        assert!((q - 2.0 / std::f64::consts::PI).abs() < 1e-12);
    }
}
