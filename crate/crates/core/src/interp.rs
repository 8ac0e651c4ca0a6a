//! Shape-preserving piecewise cubic Hermite interpolation (Fritsch–Butland
//! slopes, as in PCHIP) on nonuniform nodes.

/// Nodal slopes for a monotone cubic interpolant through `(x, y)`.
pub fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a == 0.0 || b == 0.0 || a.signum() != b.signum() {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / a + w2 / b);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Cubic Hermite value and derivative on `[x0, x0 + h]` at offset `s = x - x0`.
#[inline]
pub fn hermite(h: f64, y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> (f64, f64) {
    let t = s / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    let value = h00 * y0 + h * h10 * d0 + h01 * y1 + h * h11 * d1;
    let dh00 = (6.0 * t2 - 6.0 * t) / h;
    let dh10 = 3.0 * t2 - 4.0 * t + 1.0;
    let dh01 = (-6.0 * t2 + 6.0 * t) / h;
    let dh11 = 3.0 * t2 - 2.0 * t;
    let deriv = dh00 * y0 + dh10 * d0 + dh01 * y1 + dh11 * d1;
    (value, deriv)
}

/// Hermite value only.
#[inline]
pub fn hermite_value(h: f64, y0: f64, y1: f64, d0: f64, d1: f64, s: f64) -> f64 {
    let t = s / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + h * (t3 - 2.0 * t2 + t) * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + h * (t3 - t2) * d1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interpolate(x: &[f64], y: &[f64], d: &[f64], q: f64) -> f64 {
        let i = x.partition_point(|&v| v <= q).clamp(1, x.len() - 1) - 1;
        hermite_value(x[i + 1] - x[i], y[i], y[i + 1], d[i], d[i + 1], q - x[i])
    }

    #[test]
    fn reproduces_nodes_and_preserves_monotonicity() {
        let x = [0.0, 0.3, 1.0, 1.1, 3.0, 7.0];
        let y = [0.0, 0.1, 0.1, 2.0, 2.5, 2.6];
        let d = pchip_slopes(&x, &y);
        for i in 0..x.len() {
            assert_eq!(interpolate(&x, &y, &d, x[i]), y[i]);
        }
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=700 {
            let v = interpolate(&x, &y, &d, k as f64 * 0.01);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn third_order_convergence_on_smooth_monotone_data() {
        let f = |r: f64| 1.0 / (1.0 + r * r);
        let err = |n: usize| {
            let x: Vec<f64> = (0..n).map(|i| 1.0 + 4.0 * i as f64 / (n - 1) as f64).collect();
            let y: Vec<f64> = x.iter().map(|&r| f(r)).collect();
            let d = pchip_slopes(&x, &y);
            (0..997)
                .map(|k| {
                    let q = 1.0 + 4.0 * (k as f64 + 0.37) / 1000.0;
                    (interpolate(&x, &y, &d, q) - f(q)).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(161), err(321));
        let order = (e1 / e2).log2();
        assert!(order > 2.8, "observed order {order}");
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let (h, y0, y1, d0, d1) = (0.7, 1.0, 2.0, 0.3, -0.4);
        let s = 0.31;
        let (_, dv) = hermite(h, y0, y1, d0, d1, s);
        let e = 1e-6;
        let fd = (hermite_value(h, y0, y1, d0, d1, s + e) - hermite_value(h, y0, y1, d0, d1, s - e))
            / (2.0 * e);
        assert!((dv - fd).abs() < 1e-8);
    }
}
