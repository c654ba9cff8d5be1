//! Nonlinearity families `f` for `□u + f(u) = 0` with exact derivative
//! ladders `f, f', …, f⁽⁵⁾`, antiderivatives `F(u) = ∫₀ᵘ f`, and validation
//! of the structural hypotheses used throughout the crate:
//!
//! * H1: `f(u) = u·h(u)` with `h` even and `|u|⁵/C ≤ |f(u)| ≤ C·|u|⁵`,
//! * H2: `u·f'(u) ≍ f(u)` (bounded ratio, probed at extreme samples),
//! * H3: `F ≥ 0`, `F(0) = 0` and `F` convex (equivalently `f' ≥ 0`),
//! * H4: `|f⁽ʲ⁾(u)| ≤ C_j·|u|^{5-j}` for `0 ≤ j ≤ 5` with `f⁽ʲ⁾(0) = 0`
//!   for `j ≤ 4`,
//! * B1: `f⁽⁴⁾(u) = 0` exactly when `u = 0`.
//!
//! The flagship smooth family fixes the fourth derivative
//! `f⁽⁴⁾(u) = c·u·(1 + z₀·u²/(1+u²))` with `|z₀| < 1` and integrates it down
//! with vanishing constants; the pure quintic is the `z₀ = 0` member up to
//! normalization. Tabulated families are built from sampled third
//! derivatives and serve as the output format of coefficient recovery.

use crate::{Error, Result};

const MAX_ORDER: u32 = 5;

#[derive(Debug, Clone)]
enum Family {
    Zero,
    /// `f(u) = Σ coeffs[k]·uᵏ`.
    Polynomial { coeffs: Vec<f64> },
    /// `f⁽⁴⁾(u) = c·u·(1 + z₀·u²/(1+u²))`, lower orders by exact integration.
    PerturbedQuintic { c: f64, z0: f64 },
    Tabulated(Tables),
}

/// Uniformly sampled derivative ladder anchored at a grid node at `u = 0`.
#[derive(Debug, Clone)]
struct Tables {
    u0: f64,
    du: f64,
    /// tables[j] samples `f⁽ʲ⁾` for j = 0..=5.
    tables: [Vec<f64>; 6],
    anti: Vec<f64>,
}

/// A nonlinearity with labeled provenance and a declared H1/H4 growth
/// constant. Evaluation of out-of-range orders or out-of-domain points (for
/// tabulated families) is an argument error, never a panic.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    label: String,
    family: Family,
    growth_c: f64,
}

impl Nonlinearity {
    /// `f(u) = c·u⁵` with `c > 0`.
    pub fn quintic(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Argument(format!("quintic coefficient must be positive, got {c}")));
        }
        let mut coeffs = vec![0.0; 6];
        coeffs[5] = c;
        Ok(Self {
            label: if c == 1.0 { "u^5".into() } else { format!("{c}*u^5") },
            family: Family::Polynomial { coeffs },
            growth_c: c.max(1.0 / c) * (1.0 + 1e-9),
        })
    }

    /// The zero nonlinearity (free wave equation).
    pub fn zero() -> Self {
        Self {
            label: "0".into(),
            family: Family::Zero,
            growth_c: 1.0,
        }
    }

    /// Polynomial `f(u) = Σ coeffs[k]·uᵏ`, mainly for building hypothesis
    /// counterexamples. The growth constant is estimated empirically from
    /// the ratio `|f|/|u|⁵` over `1 ≤ |u| ≤ 10`.
    pub fn polynomial(label: &str, coeffs: &[f64]) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("polynomial coefficients must be finite and nonempty".into()));
        }
        let family = Family::Polynomial { coeffs: coeffs.to_vec() };
        let mut worst: f64 = 1.0;
        for i in 0..=400 {
            let u = 1.0 + 9.0 * i as f64 / 400.0;
            for u in [u, -u] {
                let f = eval_family(&family, u, 0).abs();
                let u5 = u.abs().powi(5);
                if f > 0.0 {
                    worst = worst.max(f / u5).max(u5 / f);
                }
            }
        }
        Ok(Self {
            label: label.into(),
            family,
            growth_c: worst * 1.01,
        })
    }

    /// Smooth perturbed family defined through its fourth derivative
    /// `f⁽⁴⁾(u) = c·u·(1 + Z(u))` with `Z(u) = z₀·u²/(1+u²)`; requires
    /// `c > 0` and `|z₀| < 1` so that `f⁽⁴⁾` vanishes only at the origin.
    pub fn perturbed_quintic(c: f64, z0: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Argument(format!("scale must be positive, got {c}")));
        }
        if !(z0.is_finite() && z0.abs() < 1.0) {
            return Err(Error::Argument(format!("perturbation strength must satisfy |z0| < 1, got {z0}")));
        }
        // |f/u⁵| ∈ [c/120·(1-|z0|), c/120·(1+|z0|)] up to the bounded tail of Z.
        let lo = c / 120.0 * (1.0 - z0.abs());
        let hi = c / 120.0 * (1.0 + z0.abs());
        Ok(Self {
            label: format!("perturbed_quintic(c={c},z0={z0})"),
            family: Family::PerturbedQuintic { c, z0 },
            growth_c: (hi.max(1.0 / lo)) * 1.01,
        })
    }

    /// Build a tabulated family from samples of the third derivative on a
    /// uniform grid that contains `u = 0` as a node. Lower orders are
    /// obtained by repeated cumulative integration anchored at zero, order
    /// four and five by finite differences of the samples.
    pub fn from_third_derivative_table(label: &str, u0: f64, du: f64, g3: &[f64]) -> Result<Self> {
        if g3.len() < 9 {
            return Err(Error::Argument("need at least 9 third-derivative samples".into()));
        }
        if !(du.is_finite() && du > 0.0) || !u0.is_finite() || g3.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("third-derivative table must be finite with du > 0".into()));
        }
        let k = -u0 / du;
        if (k - k.round()).abs() > 1e-8 || k.round() < 0.0 || (k.round() as usize) >= g3.len() {
            return Err(Error::Precondition("sample grid must contain u = 0 as a node".into()));
        }
        let zero_node = k.round() as usize;
        let anchor = |mut cum: Vec<f64>| -> Vec<f64> {
            let c0 = cum[zero_node];
            for v in &mut cum {
                *v -= c0;
            }
            cum
        };
        let f3 = g3.to_vec();
        let f2 = anchor(crate::util::cumtrapz_corrected(&f3, du));
        let f1 = anchor(crate::util::cumtrapz_corrected(&f2, du));
        let f0 = anchor(crate::util::cumtrapz_corrected(&f1, du));
        let anti = anchor(crate::util::cumtrapz_corrected(&f0, du));
        let f4 = table_derivative(&f3, du);
        let f5 = table_derivative(&f4, du);
        let mut worst: f64 = 1.0;
        for (i, &v) in f0.iter().enumerate() {
            let u = u0 + du * i as f64;
            if u.abs() >= 0.5 {
                let u5 = u.abs().powi(5);
                if v.abs() > 0.0 {
                    worst = worst.max(v.abs() / u5).max(u5 / v.abs());
                }
            }
        }
        Ok(Self {
            label: label.into(),
            family: Family::Tabulated(Tables {
                u0,
                du,
                tables: [f0, f1, f2, f3, f4, f5],
                anti,
            }),
            growth_c: worst * 1.01,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Declared constant for the H1/H4 growth bounds.
    pub fn growth_constant(&self) -> f64 {
        self.growth_c
    }

    /// True for the identically-zero family (linear evolution).
    pub fn is_zero(&self) -> bool {
        matches!(self.family, Family::Zero)
    }

    /// Domain of validity, if restricted (tabulated families only).
    pub fn domain(&self) -> Option<(f64, f64)> {
        match &self.family {
            Family::Tabulated(t) => {
                Some((t.u0, t.u0 + t.du * (t.tables[0].len() - 1) as f64))
            }
            _ => None,
        }
    }

    /// Evaluate `f⁽ᵒʳᵈᵉʳ⁾(u)` for `order ≤ 5`.
    pub fn eval(&self, u: f64, order: u32) -> Result<f64> {
        if order > MAX_ORDER {
            return Err(Error::Argument(format!("derivative order {order} exceeds {MAX_ORDER}")));
        }
        if !u.is_finite() {
            return Err(Error::Argument(format!("evaluation point must be finite, got {u}")));
        }
        if let Some((lo, hi)) = self.domain() {
            if u < lo - 1e-12 || u > hi + 1e-12 {
                return Err(Error::Argument(format!(
                    "u = {u} outside tabulated domain [{lo}, {hi}]"
                )));
            }
        }
        Ok(eval_family(&self.family, u, order))
    }

    /// Evaluate `f⁽ᵒʳᵈᵉʳ⁾` over a whole field into `out`, hoisting the
    /// validity checks out of the per-sample loop; this is the solver
    /// hot-path variant of `eval`.
    pub fn eval_field(&self, u: &[f64], order: u32, out: &mut [f64]) -> Result<()> {
        if order > MAX_ORDER {
            return Err(Error::Argument(format!("derivative order {order} exceeds {MAX_ORDER}")));
        }
        if out.len() != u.len() {
            return Err(Error::Argument(format!(
                "output buffer has {} slots for {} samples",
                out.len(),
                u.len()
            )));
        }
        let (lo, hi) = self.domain().unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        for &v in u {
            if !v.is_finite() || v < lo - 1e-12 || v > hi + 1e-12 {
                return Err(Error::Argument(format!("evaluation point {v} invalid for {}", self.label)));
            }
        }
        for (o, &v) in out.iter_mut().zip(u) {
            *o = eval_family(&self.family, v, order);
        }
        Ok(())
    }

    /// `F(u) = ∫₀ᵘ f(v) dv`, exact for closed-form families and cumulative
    /// quadrature for tabulated ones.
    pub fn antiderivative(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Argument(format!("evaluation point must be finite, got {u}")));
        }
        match &self.family {
            Family::Zero => Ok(0.0),
            Family::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (k, &c) in coeffs.iter().enumerate().rev() {
                    acc = acc * u + c / (k as f64 + 1.0);
                }
                Ok(acc * u)
            }
            Family::PerturbedQuintic { c, z0 } => Ok(perturbed_eval(*c, *z0, u, PerturbedPiece::Anti)),
            Family::Tabulated(t) => {
                if let Some((lo, hi)) = self.domain() {
                    if u < lo - 1e-12 || u > hi + 1e-12 {
                        return Err(Error::Argument(format!(
                            "u = {u} outside tabulated domain [{lo}, {hi}]"
                        )));
                    }
                }
                Ok(crate::util::interp_cubic_uniform(&t.anti, t.u0, t.du, u))
            }
        }
    }
}

fn table_derivative(values: &[f64], du: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = (values[i + 1] - values[i - 1]) / (2.0 * du);
    }
    out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * du);
    out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * du);
    out
}

fn eval_family(family: &Family, u: f64, order: u32) -> f64 {
    match family {
        Family::Zero => 0.0,
        Family::Polynomial { coeffs } => {
            let mut acc = 0.0;
            for (k, &c) in coeffs.iter().enumerate().rev() {
                if (k as u32) < order {
                    break;
                }
                let mut fall = 1.0;
                for j in 0..order {
                    fall *= (k as u32 - j) as f64;
                }
                acc = acc * u + c * fall;
            }
            acc
        }
        Family::PerturbedQuintic { c, z0 } => {
            let piece = match order {
                0 => PerturbedPiece::D(0),
                1 => PerturbedPiece::D(1),
                2 => PerturbedPiece::D(2),
                3 => PerturbedPiece::D(3),
                4 => return c * u * (1.0 + z0 * u * u / (1.0 + u * u)),
                _ => {
                    let q = 1.0 + u * u;
                    return c * (1.0 + z0 * u * u * (u * u + 3.0) / (q * q));
                }
            };
            perturbed_eval(*c, *z0, u, piece)
        }
        Family::Tabulated(t) => {
            crate::util::interp_cubic_uniform(&t.tables[order as usize], t.u0, t.du, u)
        }
    }
}

/// Horner evaluation of a polynomial in u² (ascending coefficients).
fn poly_even(u2: f64, coeffs: &[f64]) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u2 + c)
}

#[derive(Clone, Copy)]
enum PerturbedPiece {
    /// derivative order 0..=3
    D(u32),
    Anti,
}

/// Closed forms of the integrated perturbed family, with an alternating
/// power-series branch near the origin where the closed form loses
/// relative precision to cancellation.
fn perturbed_eval(c: f64, z0: f64, u: f64, piece: PerturbedPiece) -> f64 {
    if u.abs() <= 0.5 {
        return c * perturbed_series(z0, u, piece);
    }
    let l = u.mul_add(u, 1.0).ln();
    let a = u.atan();
    let u2 = u * u;
    match piece {
        PerturbedPiece::D(3) => c / 2.0 * ((1.0 + z0) * u2 - z0 * l),
        PerturbedPiece::D(2) => {
            c / 6.0 * ((1.0 + z0) * u2 * u + z0 * (6.0 * u - 3.0 * u * l - 6.0 * a))
        }
        PerturbedPiece::D(1) => {
            c / 24.0
                * ((1.0 + z0) * u2 * u2
                    + z0 * (18.0 * u2 - 24.0 * u * a + 6.0 * (1.0 - u2) * l))
        }
        PerturbedPiece::D(0) => {
            c / 360.0
                * (3.0 * (1.0 + z0) * u2 * u2 * u
                    + z0
                        * (110.0 * u2 * u - 180.0 * u2 * a - 60.0 * u
                            + 60.0 * a
                            + 30.0 * u * (3.0 - u2) * l))
        }
        PerturbedPiece::D(_) => unreachable!("orders 4 and 5 are closed-form upstream"),
        PerturbedPiece::Anti => {
            c / 1440.0
                * (2.0 * (1.0 + z0) * u2 * u2 * u2
                    + z0
                        * (125.0 * u2 * u2 - 240.0 * u2 * u * a - 210.0 * u2
                            + 240.0 * u * a
                            + poly_even(u2, &[-30.0, 180.0, -30.0]) * l))
        }
    }
}

/// Series branch: the z₀ tail of Z(u) = z₀u²/(1+u²) integrates to
/// `Σ_{k≥2} (-1)ᵏ u^{2k+m} / ((2k)(2k+1)⋯(2k+m))` with m the number of
/// integrations past order three. Converges geometrically for |u| ≤ 1/2.
fn perturbed_series(z0: f64, u: f64, piece: PerturbedPiece) -> f64 {
    let (m, lead) = match piece {
        PerturbedPiece::D(3) => (0u32, u * u / 2.0),
        PerturbedPiece::D(2) => (1, u.powi(3) / 6.0),
        PerturbedPiece::D(1) => (2, u.powi(4) / 24.0),
        PerturbedPiece::D(0) => (3, u.powi(5) / 120.0),
        PerturbedPiece::Anti => (4, u.powi(6) / 720.0),
        PerturbedPiece::D(_) => unreachable!(),
    };
    let u2 = u * u;
    let mut tail = 0.0;
    let mut upow = u2 * u2 * u.powi(m as i32); // u^{4+m} at k = 2
    let mut sign = 1.0;
    for k in 2u32..60 {
        let mut denom = 1.0;
        for j in 0..=m {
            denom *= (2 * k + j) as f64;
        }
        let term = sign * upow / denom;
        tail += term;
        if term.abs() < 1e-18 * (tail.abs() + lead.abs()) {
            break;
        }
        upow *= u2;
        sign = -sign;
    }
    lead + z0 * tail
}

/// Outcome of one hypothesis check; `metric` is the worst observed ratio or
/// deficit for the check and `witnesses` lists up to eight offending sample
/// points.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub metric: f64,
    pub witnesses: Vec<f64>,
    pub note: String,
}

impl Check {
    fn pass(metric: f64, note: &str) -> Self {
        Check {
            passed: true,
            metric,
            witnesses: Vec::new(),
            note: note.into(),
        }
    }
}

/// Report of all structural hypothesis checks over a sample grid.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub h1: Check,
    pub h2: Check,
    pub h3: Check,
    pub h4: Check,
    pub b1: Check,
    /// Empirically tightest constant for the H1 bounds on this grid,
    /// regardless of the declared one.
    pub tightest_c: f64,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.h1.passed && self.h2.passed && self.h3.passed && self.h4.passed && self.b1.passed
    }
}

/// Default validation grid: uniform, 10⁴+1 points on [-10, 10], symmetric
/// about the origin.
pub fn default_validation_grid() -> Vec<f64> {
    let n = 10_000usize;
    (0..=n).map(|i| -10.0 + 20.0 * i as f64 / n as f64).collect()
}

fn push_witness(w: &mut Vec<f64>, u: f64) {
    if w.len() < 8 {
        w.push(u);
    }
}

/// Validate the structural hypotheses on a sample grid. The grid must be
/// finite, strictly increasing, and straddle the origin.
pub fn validate_hypotheses(nl: &Nonlinearity, grid: &[f64]) -> Result<HypothesisReport> {
    if grid.len() < 16 {
        return Err(Error::Precondition("validation grid needs at least 16 points".into()));
    }
    if grid.iter().any(|u| !u.is_finite()) {
        return Err(Error::Precondition("validation grid must be finite".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition("validation grid must be strictly increasing".into()));
    }
    if grid[0] >= 0.0 || grid[grid.len() - 1] <= 0.0 {
        return Err(Error::Precondition("validation grid must straddle the origin".into()));
    }

    let c_h1 = nl.growth_constant();
    let mut f = Vec::with_capacity(grid.len());
    let mut f1 = Vec::with_capacity(grid.len());
    let mut f4 = Vec::with_capacity(grid.len());
    for &u in grid {
        f.push(nl.eval(u, 0)?);
        f1.push(nl.eval(u, 1)?);
        f4.push(nl.eval(u, 4)?);
    }

    // H1 growth bounds with the declared constant, and h-evenness via
    // f-oddness: h(u) = f(u)/u even iff f odd.
    let mut h1 = Check::pass(1.0, "growth bounds and parity of h");
    let mut tightest: f64 = 1.0;
    for (i, &u) in grid.iter().enumerate() {
        if u == 0.0 {
            continue;
        }
        let u5 = u.abs().powi(5);
        let fa = f[i].abs();
        let (ratio, inv) = if fa > 0.0 {
            (fa / u5, u5 / fa)
        } else {
            (0.0, f64::INFINITY)
        };
        tightest = tightest.max(ratio).max(inv);
        if ratio > c_h1 || inv > c_h1 {
            if h1.passed {
                h1.passed = false;
                h1.note = format!("growth bound violated against declared C = {c_h1:.6e}");
            }
            push_witness(&mut h1.witnesses, u);
        }
        h1.metric = h1.metric.max(ratio).max(inv);
    }
    let odd_scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, &u) in grid.iter().enumerate() {
        if u <= 0.0 {
            continue;
        }
        // Nearest sample of -u; exact on symmetric grids.
        let j = match grid.binary_search_by(|g| g.partial_cmp(&-u).unwrap()) {
            Ok(j) => j,
            Err(_) => continue,
        };
        if (f[i] + f[j]).abs() > 1e-8 * odd_scale.max(1e-300) {
            if h1.passed {
                h1.passed = false;
                h1.note = "h(u) = f(u)/u is not even (f not odd)".into();
            }
            push_witness(&mut h1.witnesses, u);
        }
    }

    // H2 at the extreme samples: largest |u| on both sides plus the
    // smallest nonzero |u| samples. Bounded-ratio window [1/25, 25].
    let mut h2 = Check::pass(0.0, "ratio u·f'/f at extreme samples within [1/25, 25]");
    let mut extremes: Vec<usize> = vec![0, grid.len() - 1];
    if let Some(p) = grid.iter().position(|&u| u > 0.0) {
        extremes.push(p);
        if p >= 1 && grid[p - 1] < 0.0 {
            extremes.push(p - 1);
        }
    }
    for &i in &extremes {
        let u = grid[i];
        if u == 0.0 || f[i] == 0.0 {
            if f[i] == 0.0 && u != 0.0 {
                h2.passed = false;
                h2.note = "f vanishes at an extreme sample".into();
                push_witness(&mut h2.witnesses, u);
            }
            continue;
        }
        let ratio = (u * f1[i] / f[i]).abs();
        h2.metric = h2.metric.max(ratio);
        if !(0.04..=25.0).contains(&ratio) {
            h2.passed = false;
            h2.note = "ratio u·f'/f out of the bounded window".into();
            push_witness(&mut h2.witnesses, u);
        }
    }

    // H3: F(0) = 0 and convexity of F, checked as f' ≥ 0 up to roundoff.
    let mut h3 = Check::pass(0.0, "F(0) = 0 and f' ≥ 0 (convexity deficit)");
    let f1_scale = f1.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let fz = nl.antiderivative(0.0)?;
    if fz.abs() > 1e-12 {
        h3.passed = false;
        h3.note = format!("F(0) = {fz:e} differs from 0");
    }
    for (i, &u) in grid.iter().enumerate() {
        if f1[i] < -1e-10 * f1_scale {
            h3.passed = false;
            h3.metric = h3.metric.max(-f1[i]);
            if h3.note.starts_with("F(0)") {
                // keep the first failure note
            } else {
                h3.note = "f' < 0: F not convex".into();
            }
            push_witness(&mut h3.witnesses, u);
        }
    }

    // H4: vanishing at the origin through order 4 and growth of each
    // derivative with C_j = C·5!/(5-j)!.
    let mut h4 = Check::pass(1.0, "derivative growth |f^(j)| <= C_j |u|^(5-j)");
    for j in 0..=4u32 {
        let v0 = nl.eval(0.0, j)?;
        let scale: f64 = grid
            .iter()
            .map(|&u| nl.eval(u, j).map(|v| v.abs()).unwrap_or(0.0))
            .fold(0.0, f64::max);
        if v0.abs() > 1e-10 * scale.max(1e-300) {
            h4.passed = false;
            h4.note = format!("f^({j})(0) = {v0:e} does not vanish");
            push_witness(&mut h4.witnesses, 0.0);
        }
    }
    let mut falling = 1.0;
    for j in 0..=5u32 {
        let cj = c_h1 * falling;
        for &u in grid {
            if u == 0.0 {
                continue;
            }
            let v = nl.eval(u, j)?.abs();
            let bound = cj * u.abs().powi(5 - j as i32);
            let ratio = if bound > 0.0 { v / bound } else { f64::INFINITY };
            h4.metric = h4.metric.max(ratio);
            if ratio > 1.0 {
                if h4.passed {
                    h4.passed = false;
                    h4.note = format!("|f^({j})| exceeds C_j|u|^(5-{j})");
                }
                push_witness(&mut h4.witnesses, u);
            }
        }
        falling *= 5.0 - j as f64;
    }

    // B1: f⁽⁴⁾ vanishes exactly at the origin.
    let mut b1 = Check::pass(0.0, "f'''' = 0 iff u = 0");
    let f4_scale = f4.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    for (i, &u) in grid.iter().enumerate() {
        if u == 0.0 {
            if f4[i].abs() > 1e-10 * f4_scale {
                b1.passed = false;
                b1.note = format!("f''''(0) = {:e} does not vanish", f4[i]);
                push_witness(&mut b1.witnesses, u);
            }
        } else if f4[i].abs() <= 1e-12 * f4_scale {
            b1.passed = false;
            if b1.note.starts_with("f'''' = 0 iff") {
                b1.note = "f'''' vanishes away from the origin".into();
            }
            push_witness(&mut b1.witnesses, u);
        }
    }

    Ok(HypothesisReport {
        h1,
        h2,
        h3,
        h4,
        b1,
        tightest_c: tightest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(nl: &Nonlinearity, u: f64, order: u32, h: f64) -> f64 {
        (nl.eval(u + h, order).unwrap() - nl.eval(u - h, order).unwrap()) / (2.0 * h)
    }

    #[test]
    fn quintic_ladder_is_exact() {
        let nl = Nonlinearity::quintic(1.0).unwrap();
        let u = 1.7f64;
        assert!((nl.eval(u, 0).unwrap() - u.powi(5)).abs() < 1e-12);
        assert!((nl.eval(u, 1).unwrap() - 5.0 * u.powi(4)).abs() < 1e-12);
        assert!((nl.eval(u, 2).unwrap() - 20.0 * u.powi(3)).abs() < 1e-12);
        assert!((nl.eval(u, 3).unwrap() - 60.0 * u.powi(2)).abs() < 1e-11);
        assert!((nl.eval(u, 4).unwrap() - 120.0 * u).abs() < 1e-11);
        assert!((nl.eval(u, 5).unwrap() - 120.0).abs() < 1e-12);
        assert!((nl.antiderivative(u).unwrap() - u.powi(6) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn eval_rejects_order_six() {
        let nl = Nonlinearity::quintic(1.0).unwrap();
        assert!(matches!(nl.eval(1.0, 6), Err(Error::Argument(_))));
    }

    #[test]
    fn derivative_ladder_consistent_under_finite_differences() {
        // Central difference of order j matches order j+1 to ~1e-6 relative.
        let fams = [
            Nonlinearity::quintic(2.0).unwrap(),
            Nonlinearity::perturbed_quintic(120.0, 0.6).unwrap(),
            Nonlinearity::perturbed_quintic(50.0, -0.9).unwrap(),
        ];
        for nl in &fams {
            for j in 0..=4u32 {
                for i in 0..60 {
                    let u = -3.0 + 6.0 * i as f64 / 59.0;
                    let h = 1e-5 * u.abs().max(0.3);
                    let fd = central_diff(nl, u, j, h);
                    let ex = nl.eval(u, j + 1).unwrap();
                    let scale = ex.abs().max(u.abs().powi((4 - j as i32).max(0))).max(1e-6);
                    assert!(
                        (fd - ex).abs() <= 2e-6 * scale,
                        "{} order {} at u={}: fd={} exact={}",
                        nl.label(),
                        j,
                        u,
                        fd,
                        ex
                    );
                }
            }
        }
    }

    #[test]
    fn antiderivative_differentiates_back_to_f() {
        let fams = [
            Nonlinearity::quintic(1.0).unwrap(),
            Nonlinearity::perturbed_quintic(120.0, 0.5).unwrap(),
        ];
        for nl in &fams {
            for i in 0..50 {
                let u = -2.5 + 5.0 * i as f64 / 49.0;
                let h = 1e-5 * u.abs().max(0.3);
                let fd =
                    (nl.antiderivative(u + h).unwrap() - nl.antiderivative(u - h).unwrap()) / (2.0 * h);
                let ex = nl.eval(u, 0).unwrap();
                assert!(
                    (fd - ex).abs() <= 2e-6 * ex.abs().max(1e-6),
                    "u={u}: fd={fd} f={ex}"
                );
            }
        }
    }

    #[test]
    fn perturbed_series_and_closed_form_agree_at_the_seam() {
        let nl = Nonlinearity::perturbed_quintic(120.0, 0.8).unwrap();
        // Straddle the branch switch at |u| = 1/2 so closely that the true
        // variation f'(1/2)·2ε ~ 6e-10 is negligible against the tolerance;
        // any coefficient error in either branch shows as an O(1) jump.
        for sign in [-1.0, 1.0] {
            let a = sign * (0.5 - 1e-9);
            let b = sign * (0.5 + 1e-9);
            for order in 0..=3u32 {
                let va = nl.eval(a, order).unwrap();
                let vb = nl.eval(b, order).unwrap();
                assert!(
                    (va - vb).abs() < 1e-7 * va.abs().max(1e-12),
                    "seam jump at order {order}: {va} vs {vb}"
                );
            }
            let fa = nl.antiderivative(a).unwrap();
            let fb = nl.antiderivative(b).unwrap();
            assert!(
                (fa - fb).abs() < 1e-7 * fa.abs(),
                "antiderivative seam jump: {fa} vs {fb}"
            );
        }
    }

    #[test]
    fn perturbed_reduces_to_quintic_at_zero_strength() {
        let p = Nonlinearity::perturbed_quintic(120.0, 0.0).unwrap();
        let q = Nonlinearity::quintic(1.0).unwrap();
        for i in 0..30 {
            let u = -2.0 + 4.0 * i as f64 / 29.0;
            for order in 0..=5u32 {
                let a = p.eval(u, order).unwrap();
                let b = q.eval(u, order).unwrap();
                assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "order {order}, u {u}");
            }
        }
    }

    #[test]
    fn quintic_passes_all_hypotheses() {
        let nl = Nonlinearity::quintic(1.0).unwrap();
        let rep = validate_hypotheses(&nl, &default_validation_grid()).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert!(rep.tightest_c < 1.0 + 1e-9);
    }

    #[test]
    fn perturbed_passes_all_hypotheses() {
        let nl = Nonlinearity::perturbed_quintic(120.0, 0.7).unwrap();
        let rep = validate_hypotheses(&nl, &default_validation_grid()).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
    }

    #[test]
    fn cubic_fails_growth_near_origin() {
        let nl = Nonlinearity::polynomial("u^3", &[0.0, 0.0, 0.0, 1.0]).unwrap();
        let rep = validate_hypotheses(&nl, &default_validation_grid()).unwrap();
        assert!(!rep.h1.passed);
        assert!(!rep.h1.witnesses.is_empty());
        // The violation is at small |u| where |u³|/|u⁵| blows up.
        assert!(rep.h1.witnesses.iter().all(|u| u.abs() < 1.0));
    }

    #[test]
    fn quartic_admixture_breaks_parity() {
        let nl = Nonlinearity::polynomial("u^5+u^4", &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let rep = validate_hypotheses(&nl, &default_validation_grid()).unwrap();
        assert!(!rep.h1.passed);
    }

    #[test]
    fn tabulated_from_quintic_third_derivative_matches() {
        // g3 = 60u² integrates back to u⁵.
        let n = 4000usize;
        let du = 2.0 / n as f64;
        let g3: Vec<f64> = (0..=n)
            .map(|i| {
                let u = -1.0 + du * i as f64;
                60.0 * u * u
            })
            .collect();
        let nl = Nonlinearity::from_third_derivative_table("recovered", -1.0, du, &g3).unwrap();
        for i in 0..40 {
            let u = -0.99 + 1.98 * i as f64 / 39.0;
            let v = nl.eval(u, 0).unwrap();
            assert!((v - u.powi(5)).abs() < 2e-7, "u={u}: {v} vs {}", u.powi(5));
        }
        let (lo, hi) = nl.domain().unwrap();
        assert!(lo == -1.0 && (hi - 1.0).abs() < 1e-12);
        assert!(nl.eval(1.5, 0).is_err());
    }

    #[test]
    fn validation_grid_preconditions() {
        let nl = Nonlinearity::quintic(1.0).unwrap();
        assert!(matches!(
            validate_hypotheses(&nl, &[0.0; 4]),
            Err(Error::Precondition(_))
        ));
        let positive: Vec<f64> = (1..100).map(|i| i as f64).collect();
        assert!(matches!(
            validate_hypotheses(&nl, &positive),
            Err(Error::Precondition(_))
        ));
    }
}
