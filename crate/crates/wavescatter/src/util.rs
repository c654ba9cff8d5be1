//! Small shared numerics: interpolation, cumulative quadrature, adaptive
//! Simpson, and least-squares fits used by the extraction and study code.

/// Linear interpolation into a uniformly sampled table starting at `x0` with
/// spacing `dx`. Clamps to the table ends.
pub(crate) fn lerp_uniform(values: &[f64], x0: f64, dx: f64, x: f64) -> f64 {
    debug_assert!(dx > 0.0);
    if values.is_empty() {
        return 0.0;
    }
    let t = (x - x0) / dx;
    if t <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if t >= last as f64 {
        return values[last];
    }
    let i = t.floor() as usize;
    let w = t - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

/// Cubic (4-point Lagrange) interpolation on a uniform table, clamping at
/// the ends; falls back to linear when fewer than four samples exist.
pub(crate) fn interp_cubic_uniform(values: &[f64], x0: f64, dx: f64, x: f64) -> f64 {
    debug_assert!(dx > 0.0);
    let last = match values.len() {
        0 => return 0.0,
        n if n < 4 => return lerp_uniform(values, x0, dx, x),
        n => n - 1,
    };
    let t = ((x - x0) / dx).clamp(0.0, last as f64);
    // Window [i-1, i+2] around the cell containing t.
    let i = (t.floor() as usize).clamp(1, last - 2);
    let s = t - i as f64; // in [-1, 2] after clamping the window
    let (a, b, c, d) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
    let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
    let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
    let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
    a * w0 + b * w1 + c * w2 + d * w3
}

/// Cumulative trapezoid of uniformly spaced samples; output[0] = 0.
pub(crate) fn cumtrapz(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Cumulative trapezoid with the Euler-Maclaurin endpoint correction
/// `-h²/12·[g']` evaluated by one-sided differences. Fourth-order accurate
/// for smooth integrands, reduces to plain trapezoid on fewer than 5 points.
pub(crate) fn cumtrapz_corrected(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    if n < 5 {
        return cumtrapz(values, dx);
    }
    let deriv = |i: usize| -> f64 {
        if i == 0 {
            (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dx)
        } else if i == n - 1 {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dx)
        } else {
            (values[i + 1] - values[i - 1]) / (2.0 * dx)
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut acc = 0.0;
    out.push(0.0);
    let c = dx * dx / 12.0;
    for i in 1..n {
        acc += 0.5 * dx * (values[i - 1] + values[i]) - c * (deriv(i) - deriv(i - 1));
        out.push(acc);
    }
    out
}

/// Trapezoid rule over uniformly spaced samples.
pub(crate) fn trapz(values: &[f64], dx: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dx * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

/// Trapezoid with the Euler-Maclaurin endpoint correction
/// `-h²/12·(g'(b) - g'(a))`, endpoint slopes from five-point one-sided
/// stencils. Exact on cubics, fourth-order on smooth integrands; falls back
/// to plain trapezoid on fewer than 5 points.
pub(crate) fn trapz_corrected(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 5 {
        return trapz(values, dx);
    }
    let da = (-25.0 * values[0] + 48.0 * values[1] - 36.0 * values[2] + 16.0 * values[3]
        - 3.0 * values[4])
        / (12.0 * dx);
    let db = (25.0 * values[n - 1] - 48.0 * values[n - 2] + 36.0 * values[n - 3]
        - 16.0 * values[n - 4]
        + 3.0 * values[n - 5])
        / (12.0 * dx);
    trapz(values, dx) - dx * dx / 12.0 * (db - da)
}

/// Fourth-order first derivative of uniformly spaced samples: centered
/// five-point stencil in the interior, one-sided five-point stencils at the
/// two nodes on each end. Needs at least 5 points.
pub(crate) fn derivative_uniform(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 5, "fourth-order derivative needs at least 5 samples");
    let mut out = vec![0.0; n];
    let inv = 1.0 / (12.0 * dx);
    out[0] = (-25.0 * values[0] + 48.0 * values[1] - 36.0 * values[2] + 16.0 * values[3]
        - 3.0 * values[4])
        * inv;
    out[1] = (-3.0 * values[0] - 10.0 * values[1] + 18.0 * values[2] - 6.0 * values[3]
        + values[4])
        * inv;
    for i in 2..n - 2 {
        out[i] = (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) * inv;
    }
    out[n - 2] = (3.0 * values[n - 1] + 10.0 * values[n - 2] - 18.0 * values[n - 3]
        + 6.0 * values[n - 4]
        - values[n - 5])
        * inv;
    out[n - 1] = (25.0 * values[n - 1] - 48.0 * values[n - 2] + 36.0 * values[n - 3]
        - 16.0 * values[n - 4]
        + 3.0 * values[n - 5])
        * inv;
    out
}

/// Adaptive Simpson quadrature; test oracle for the discrete norms.
#[cfg(test)]
pub(crate) fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Result of a least-squares power-law fit `y ≈ c·xᵖ` in log-log space.
#[derive(Debug, Clone, Copy)]
pub struct LoglogFit {
    /// Fitted exponent `p`.
    pub slope: f64,
    /// Fitted `ln c`.
    pub intercept: f64,
    /// Largest absolute residual of `ln y` against the fit.
    pub max_residual: f64,
}

/// Least-squares slope of `ln y` against `ln x`. Points with non-positive
/// coordinates are rejected by returning NaN fields.
pub fn fit_loglog(points: &[(f64, f64)]) -> LoglogFit {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return LoglogFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            max_residual: f64::NAN,
        };
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let lx = x.ln();
        let ly = y.ln();
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let max_residual = points
        .iter()
        .map(|&(x, y)| (y.ln() - slope * x.ln() - intercept).abs())
        .fold(0.0, f64::max);
    LoglogFit {
        slope,
        intercept,
        max_residual,
    }
}

/// Least-squares fit of `v ≈ a + b/r` over sample pairs `(r, v)`; returns
/// `(a, b, max |residual|)`. Used for far-field extrapolation in `1/r`.
pub(crate) fn fit_inverse_radius(samples: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    debug_assert!(samples.len() >= 2);
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(r, v) in samples {
        let x = 1.0 / r;
        sx += x;
        sy += v;
        sxx += x * x;
        sxy += x * v;
    }
    let denom = n * sxx - sx * sx;
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    let resid = samples
        .iter()
        .map(|&(r, v)| (v - a - b / r).abs())
        .fold(0.0, f64::max);
    (a, b, resid)
}
