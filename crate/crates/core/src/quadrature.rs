//! One-dimensional quadrature rules used by the density and field integrals.

use std::f64::consts::PI;

/// Gauss–Legendre abscissae and weights on [-1, 1], ascending.
///
/// Roots of P_n are found by Newton iteration on the three-term recurrence,
/// starting from the Tricomi approximation.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                let (_, d) = legendre_with_derivative(n, z);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(z) and P_n'(z) from the Bonnet recurrence.
pub fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&z| mid + half * z).collect(),
        w.iter().map(|&wi| half * wi).collect(),
    )
}

/// Composite Simpson weights for `n_points` equally spaced samples with
/// spacing `h`. An odd number of intervals closes with Simpson's 3/8 rule on
/// the last three intervals.
pub fn simpson_weights(n_points: usize, h: f64) -> Vec<f64> {
    assert!(n_points >= 3, "Simpson needs at least three samples");
    let intervals = n_points - 1;
    let mut w = vec![0.0; n_points];
    let (simpson_end, tail) = if intervals % 2 == 0 {
        (intervals, false)
    } else {
        (intervals - 3, true)
    };
    let mut i = 0;
    while i < simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if tail {
        let s = simpson_end;
        let c = 3.0 * h / 8.0;
        w[s] += c;
        w[s + 1] += 3.0 * c;
        w[s + 2] += 3.0 * c;
        w[s + 3] += c;
    }
    w
}

/// Running trapezoid integral of `y` over the (possibly nonuniform) nodes `x`.
pub fn trapezoid_prefix(x: &[f64], y: &[f64]) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    // Bracket the roots of P_n by sign changes on a fine mesh and bisect.
    // Shares only the recurrence with the Newton path.
    fn legendre_roots_by_bisection(n: usize) -> Vec<f64> {
        let p = |z: f64| legendre_with_derivative(n, z).0;
        let mesh = 20_000;
        let mut roots = Vec::new();
        for k in 0..mesh {
            let a = -1.0 + 2.0 * k as f64 / mesh as f64;
            let b = -1.0 + 2.0 * (k + 1) as f64 / mesh as f64;
            if p(a) == 0.0 {
                roots.push(a);
                continue;
            }
            if p(a) * p(b) < 0.0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if p(lo) * p(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
        }
        roots
    }

    #[test]
    fn sixteen_point_nodes_match_bisection_oracle() {
        let (x, w) = gauss_legendre(16);
        let oracle = legendre_roots_by_bisection(16);
        assert_eq!(oracle.len(), 16);
        for (a, b) in x.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
        for i in 0..16 {
            assert!((x[i] + x[15 - i]).abs() < 1e-15);
        }
        // tabulated largest abscissa
        assert!((x[15] - 0.989_400_934_991_649_9).abs() < 1e-15);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_is_exact_to_degree_2n_minus_1() {
        let (x, w) = gauss_legendre(8);
        for deg in 0..16 {
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn simpson_exact_for_cubics_even_and_odd_intervals() {
        for n in [5usize, 6, 32, 33] {
            let h = 1.0 / (n - 1) as f64;
            let w = simpson_weights(n, h);
            let q: f64 = (0..n)
                .map(|i| {
                    let u = i as f64 * h;
                    w[i] * (u * u * u - 2.0 * u + 1.0)
                })
                .sum();
            assert!((q - (0.25 - 1.0 + 1.0)).abs() < 1e-14, "n = {n}: {q}");
        }
    }

    #[test]
    fn trapezoid_prefix_of_linear_is_exact() {
        let x = [0.0, 0.5, 1.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let p = trapezoid_prefix(&x, &y);
        for (xi, pi) in x.iter().zip(&p) {
            assert!((pi - xi * xi).abs() < 1e-14);
        }
    }
}
