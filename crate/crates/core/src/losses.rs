//! Margin loss families and their proximal maps.
//!
//! Every loss here is convex, nonincreasing, behaves like `-u` as `u -> -inf`
//! and decays to zero as `u -> +inf`. The proximal map
//!
//! ```text
//! psi(a, b) = argmin_u  V(u) + (u - a)^2 / (2 b),   b > 0
//! ```
//!
//! is shared by the asymptotic solver (inside Gaussian expectations) and by
//! the finite-sample trainer (per-sample splitting step), so both paths see
//! exactly the same numbers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `u` for the iterative prox solvers.
pub const PROX_TOL: f64 = 1e-12;
const PROX_MAX_ITER: usize = 200;

/// Which loss family, with its shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum LossKind {
    /// Penalized logistic regression, `log(1 + exp(-u))`.
    Plr,
    /// Hinge loss, `(1 - u)_+`.
    Svm,
    /// Generalized distance weighted discrimination with exponent `q`.
    Dwd { q: f64 },
    /// Large-margin unified machine with tail exponent `a` and breakpoint parameter `c`.
    Lum { a: f64, c: f64 },
}

/// A validated margin loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossKind", into = "LossKind")]
pub struct Loss {
    kind: LossKind,
    // DWD: q^q / (q+1)^(q+1); unused otherwise.
    dwd_scale: f64,
}

impl TryFrom<LossKind> for Loss {
    type Error = Error;

    fn try_from(kind: LossKind) -> Result<Self> {
        match kind {
            LossKind::Plr => Ok(Loss::plr()),
            LossKind::Svm => Ok(Loss::svm()),
            LossKind::Dwd { q } => Loss::dwd(q),
            LossKind::Lum { a, c } => Loss::lum(a, c),
        }
    }
}

impl From<Loss> for LossKind {
    fn from(loss: Loss) -> Self {
        loss.kind
    }
}

impl Loss {
    pub fn plr() -> Self {
        Loss {
            kind: LossKind::Plr,
            dwd_scale: 0.0,
        }
    }

    pub fn svm() -> Self {
        Loss {
            kind: LossKind::Svm,
            dwd_scale: 0.0,
        }
    }

    pub fn dwd(q: f64) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::InvalidLoss(format!("DWD exponent q must be > 0, got {q}")));
        }
        let dwd_scale = (q * q.ln() - (q + 1.0) * (q + 1.0).ln()).exp();
        Ok(Loss {
            kind: LossKind::Dwd { q },
            dwd_scale,
        })
    }

    pub fn lum(a: f64, c: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidLoss(format!("LUM exponent a must be > 0, got {a}")));
        }
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidLoss(format!("LUM parameter c must be >= 0, got {c}")));
        }
        Ok(Loss {
            kind: LossKind::Lum { a, c },
            dwd_scale: 0.0,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    /// Point where the linear `1 - u` branch ends, if the loss has one.
    pub fn breakpoint(&self) -> Option<f64> {
        match self.kind {
            LossKind::Plr => None,
            LossKind::Svm => Some(1.0),
            LossKind::Dwd { q } => Some(q / (q + 1.0)),
            LossKind::Lum { c, .. } => Some(c / (1.0 + c)),
        }
    }

    /// Values of `a` at which `a -> psi(a, b)` is not smooth.
    pub fn prox_kinks(&self, b: f64) -> Vec<f64> {
        match self.kind {
            LossKind::Plr => Vec::new(),
            LossKind::Svm => vec![1.0 - b, 1.0],
            LossKind::Dwd { .. } | LossKind::Lum { .. } => {
                // psi crosses the breakpoint when a = breakpoint + b * V'(breakpoint) = breakpoint - b.
                vec![self.breakpoint().unwrap_or(0.0) - b]
            }
        }
    }

    /// The loss value `V(u)`.
    pub fn evaluate(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Plr => softplus(-u),
            LossKind::Svm => (1.0 - u).max(0.0),
            LossKind::Dwd { q } => {
                if u <= q / (q + 1.0) {
                    1.0 - u
                } else {
                    self.dwd_scale * u.powf(-q)
                }
            }
            LossKind::Lum { a, c } => {
                if u <= c / (1.0 + c) {
                    1.0 - u
                } else {
                    (a / ((1.0 + c) * u - c + a)).powf(a) / (1.0 + c)
                }
            }
        }
    }

    /// A subgradient of `V` at `u`; at the SVM kink returns the left derivative.
    pub fn derivative(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Plr => -logistic(-u),
            LossKind::Svm => {
                if u <= 1.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Dwd { q } => {
                if u <= q / (q + 1.0) {
                    -1.0
                } else {
                    -q * self.dwd_scale * u.powf(-q - 1.0)
                }
            }
            LossKind::Lum { a, c } => {
                if u <= c / (1.0 + c) {
                    -1.0
                } else {
                    -(a / ((1.0 + c) * u - c + a)).powf(a + 1.0)
                }
            }
        }
    }

    fn second_derivative(&self, u: f64) -> f64 {
        match self.kind {
            LossKind::Plr => {
                let s = logistic(u);
                s * (1.0 - s)
            }
            LossKind::Svm => 0.0,
            LossKind::Dwd { q } => {
                if u <= q / (q + 1.0) {
                    0.0
                } else {
                    q * (q + 1.0) * self.dwd_scale * u.powf(-q - 2.0)
                }
            }
            LossKind::Lum { a, c } => {
                if u <= c / (1.0 + c) {
                    0.0
                } else {
                    let t = (1.0 + c) * u - c + a;
                    (a + 1.0) * (1.0 + c) * (a / t).powf(a + 1.0) / t
                }
            }
        }
    }

    /// Proximal map `psi(a, b)`.
    pub fn prox(&self, a: f64, b: f64) -> Result<f64> {
        match self.kind {
            LossKind::Svm => {
                check_prox_args(a, b)?;
                Ok(if a >= 1.0 {
                    a
                } else if a >= 1.0 - b {
                    1.0
                } else {
                    a + b
                })
            }
            _ => Ok(a + self.prox_residual(a, b)?),
        }
    }

    /// `psi(a, b) - a`, computed without cancellation so it keeps full relative
    /// accuracy when `b` is small.
    pub fn prox_residual(&self, a: f64, b: f64) -> Result<f64> {
        check_prox_args(a, b)?;
        match self.kind {
            LossKind::Svm => Ok(if a >= 1.0 {
                0.0
            } else if a >= 1.0 - b {
                1.0 - a
            } else {
                b
            }),
            LossKind::Dwd { q: 1.0 } => {
                if a <= 0.5 - b {
                    Ok(b)
                } else {
                    dwd1_cubic_residual(a, b)
                }
            }
            _ => self.residual_newton(a, b),
        }
    }

    // Solves V'(a + d) + d/b = 0 on [0, b|V'(a)|] with bisection-guarded Newton.
    fn residual_newton(&self, a: f64, b: f64) -> Result<f64> {
        let g = |d: f64| self.derivative(a + d) + d / b;
        let mut lo = 0.0;
        let hi = b * self.derivative(a).abs();
        if hi == 0.0 {
            return Ok(0.0);
        }
        // Linear branch is solvable in closed form; this also handles the region
        // where V' = -1 exactly, so Newton only sees the curved tail.
        if let Some(bp) = self.breakpoint() {
            if a + b <= bp {
                return Ok(b);
            }
            lo = (bp - a).clamp(0.0, hi);
        }
        let scale = hi;
        safeguarded_newton(
            |d| (g(d), self.second_derivative(a + d) + 1.0 / b),
            lo,
            hi,
            0.5 * (lo + hi),
            scale,
        )
        .ok_or_else(|| {
            Error::Internal(format!(
                "prox root-finder did not converge for {:?} at a={a}, b={b}",
                self.kind
            ))
        })
    }
}

fn check_prox_args(a: f64, b: f64) -> Result<()> {
    if !(b > 0.0) || !b.is_finite() || !a.is_finite() {
        return Err(Error::Domain(format!(
            "prox requires finite a and b > 0 (a={a}, b={b})"
        )));
    }
    Ok(())
}

// Root d of 4 (a + d)^2 d - b = 0 with a + d > max(a, 0).
fn dwd1_cubic_residual(a: f64, b: f64) -> Result<f64> {
    let lo = (-a).max(0.0);
    let hi = lo + 1.0 + b;
    safeguarded_newton(
        |d| (4.0 * (a + d) * (a + d) * d - b, 4.0 * (a + d) * (a + 3.0 * d)),
        lo,
        hi,
        (lo + (b / 4.0).cbrt()).min(hi),
        b.min(1.0),
    )
    .ok_or_else(|| Error::Internal(format!("DWD cubic root did not converge at a={a}, b={b}")))
}

// Root of an increasing function on [lo, hi]; `f` returns (value, slope).
// Falls back to bisection whenever Newton leaves the bracket or the bracket
// fails to halve over a step.
fn safeguarded_newton(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, start: f64, scale: f64) -> Option<f64> {
    let mut x = start;
    let mut width = hi - lo;
    for _ in 0..PROX_MAX_ITER {
        let (fx, slope) = f(x);
        if fx == 0.0 {
            return Some(x);
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = if slope > 0.0 { x - fx / slope } else { f64::NAN };
        if !(next > lo && next < hi) || hi - lo > 0.5 * width {
            next = 0.5 * (lo + hi);
        }
        width = hi - lo;
        let tol = (PROX_TOL * scale).max(4.0 * f64::EPSILON * next.abs());
        if (next - x).abs() <= tol || hi - lo <= tol {
            return Some(next);
        }
        x = next;
    }
    None
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossKind::Plr => write!(f, "plr"),
            LossKind::Svm => write!(f, "svm"),
            LossKind::Dwd { q } => write!(f, "dwd:q={q}"),
            LossKind::Lum { a, c } => write!(f, "lum:a={a},c={c}"),
        }
    }
}

/// Parses `plr`, `svm`, `dwd:q=<float>` or `lum:a=<float>,c=<float>`.
impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (family, params) = match s.split_once(':') {
            Some((f, p)) => (f, Some(p)),
            None => (s, None),
        };
        let parse_params = |p: Option<&str>, names: &[&str]| -> Result<Vec<f64>> {
            let p = p.ok_or_else(|| Error::InvalidLoss(format!("`{s}` is missing parameters")))?;
            let mut out = vec![f64::NAN; names.len()];
            for kv in p.split(',') {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidLoss(format!("malformed parameter `{kv}` in `{s}`")))?;
                let idx = names
                    .iter()
                    .position(|n| *n == k.trim())
                    .ok_or_else(|| Error::InvalidLoss(format!("unknown parameter `{k}` in `{s}`")))?;
                out[idx] = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidLoss(format!("bad number `{v}` in `{s}`")))?;
            }
            if let Some(i) = out.iter().position(|v| v.is_nan()) {
                return Err(Error::InvalidLoss(format!("`{s}` is missing `{}`", names[i])));
            }
            Ok(out)
        };
        match family.to_ascii_lowercase().as_str() {
            "plr" if params.is_none() => Ok(Loss::plr()),
            "svm" if params.is_none() => Ok(Loss::svm()),
            "dwd" => {
                let v = parse_params(params, &["q"])?;
                Loss::dwd(v[0])
            }
            "lum" => {
                let v = parse_params(params, &["a", "c"])?;
                Loss::lum(v[0], v[1])
            }
            _ => Err(Error::InvalidLoss(format!("unrecognized loss `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_losses() -> Vec<Loss> {
        vec![
            Loss::plr(),
            Loss::svm(),
            Loss::dwd(1.0).unwrap(),
            Loss::dwd(0.1).unwrap(),
            Loss::dwd(3.0).unwrap(),
            Loss::lum(1.0, 0.0).unwrap(),
            Loss::lum(2.0, 1.5).unwrap(),
        ]
    }

    // Golden-section minimization of V(u) + (u-a)^2/(2b) on a fixed bracket.
    fn golden_prox(loss: &Loss, a: f64, b: f64) -> f64 {
        let obj = |u: f64| loss.evaluate(u) + (u - a) * (u - a) / (2.0 * b);
        let mut lo = a - 1.0;
        let mut hi = a + b * loss.derivative(a).abs() + 1.0;
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let (mut f1, mut f2) = (obj(x1), obj(x2));
        while hi - lo > 1e-10 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = obj(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = obj(x2);
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn evaluate_reference_values() {
        assert!((Loss::plr().evaluate(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Loss::svm().evaluate(2.0), 0.0);
        assert_eq!(Loss::svm().evaluate(0.0), 1.0);
        let dwd = Loss::dwd(1.0).unwrap();
        assert!((dwd.evaluate(0.5) - 0.5).abs() < 1e-15);
        assert!((dwd.evaluate(1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn breakpoints_are_continuous() {
        for loss in all_losses() {
            if let Some(bp) = loss.breakpoint() {
                let left = 1.0 - bp;
                let right = loss.evaluate(bp + 1e-12);
                assert!((left - right).abs() < 1e-9, "{loss}: {left} vs {right}");
                assert_eq!(loss.evaluate(bp), left);
            }
        }
    }

    #[test]
    fn asymptotes() {
        for loss in all_losses() {
            assert!((loss.evaluate(-1e3) - 1e3).abs() < 1.0 + 1e-6, "{loss}");
            assert!(loss.evaluate(1e60) < 1e-3, "{loss}");
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Loss::dwd(0.0).is_err());
        assert!(Loss::dwd(-1.0).is_err());
        assert!(Loss::lum(0.0, 1.0).is_err());
        assert!(Loss::lum(1.0, -0.1).is_err());
        assert!(Loss::svm().prox(0.0, 0.0).is_err());
    }

    #[test]
    fn svm_prox_closed_form() {
        let svm = Loss::svm();
        assert_eq!(svm.prox(2.0, 0.5).unwrap(), 2.0);
        assert_eq!(svm.prox(0.8, 0.5).unwrap(), 1.0);
        assert!((svm.prox(0.2, 0.5).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn dwd_prox_reference_values() {
        let dwd = Loss::dwd(1.0).unwrap();
        assert!((dwd.prox(-1.0, 0.5).unwrap() + 0.5).abs() < 1e-15);
        // Frozen by bisection on 4u^3 - 4u^2 - 1 to 1e-14.
        let u = dwd.prox(1.0, 1.0).unwrap();
        let mut lo = 1.0;
        let mut hi = 2.0;
        while hi - lo > 1e-14 {
            let mid = 0.5 * (lo + hi);
            if 4.0 * mid * mid * mid - 4.0 * mid * mid - 1.0 > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((u - lo).abs() < 1e-12);
        assert!((u - 1.1795).abs() < 1e-3);
        assert!((u - golden_prox(&dwd, 1.0, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn plr_prox_matches_golden_section() {
        let plr = Loss::plr();
        let u = plr.prox(0.0, 1.0).unwrap();
        // stationarity: -1/(1+e^u) + u = 0
        assert!((u - 1.0 / (1.0 + u.exp())).abs() < 1e-12);
        assert!((u - golden_prox(&plr, 0.0, 1.0)).abs() < 1e-6);
    }

    #[test]
    fn prox_matches_golden_section_on_grid() {
        for loss in all_losses() {
            for i in 0..21 {
                let a = -5.0 + 0.5 * i as f64;
                for &b in &[0.01, 0.1, 0.5, 1.0, 2.5, 5.0] {
                    let p = loss.prox(a, b).unwrap();
                    let o = golden_prox(&loss, a, b);
                    assert!((p - o).abs() < 1e-6, "{loss} a={a} b={b}: {p} vs {o}");
                }
            }
        }
    }

    #[test]
    fn prox_tends_to_identity_for_small_b() {
        for loss in all_losses() {
            for i in 0..=20 {
                let a = -10.0 + i as f64;
                assert!((loss.prox(a, 1e-8).unwrap() - a).abs() <= 1e-6, "{loss} a={a}");
            }
        }
    }

    #[test]
    fn lum_large_c_approaches_hinge() {
        let lum = Loss::lum(1.0, 1e6).unwrap();
        let svm = Loss::svm();
        for i in 0..41 {
            let u = -3.0 + 0.15 * i as f64;
            assert!((lum.evaluate(u) - svm.evaluate(u)).abs() < 1e-4, "u={u}");
        }
        for i in 0..21 {
            let a = -3.0 + 0.3 * i as f64;
            for &b in &[0.05, 0.5, 2.0] {
                let d = (lum.prox(a, b).unwrap() - svm.prox(a, b).unwrap()).abs();
                assert!(d < 1e-4, "a={a} b={b}: {d}");
            }
        }
    }

    #[test]
    fn parse_and_display() {
        for s in ["plr", "svm", "dwd:q=1", "dwd:q=0.1", "lum:a=2,c=0.5"] {
            let loss: Loss = s.parse().unwrap();
            let again: Loss = loss.to_string().parse().unwrap();
            assert_eq!(loss, again);
        }
        assert_eq!("lum:c=0.5,a=2".parse::<Loss>().unwrap(), Loss::lum(2.0, 0.5).unwrap());
        for bad in [
            "", "hinge", "dwd", "dwd:q=0", "dwd:p=1", "lum:a=1", "svm:q=1", "dwd:q=x",
        ] {
            assert!(bad.parse::<Loss>().is_err(), "{bad}");
        }
    }

    fn loss_strategy() -> impl Strategy<Value = Loss> {
        prop_oneof![
            Just(Loss::plr()),
            Just(Loss::svm()),
            (0.05f64..5.0).prop_map(|q| Loss::dwd(q).unwrap()),
            (0.1f64..5.0, 0.0f64..5.0).prop_map(|(a, c)| Loss::lum(a, c).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_convex_nonincreasing(loss in loss_strategy(), u in -20.0f64..20.0, h in 1e-3f64..1.0) {
            let (l, m, r) = (loss.evaluate(u - h), loss.evaluate(u), loss.evaluate(u + h));
            prop_assert!(m >= 0.0);
            prop_assert!(r <= m + 1e-12 && m <= l + 1e-12);
            prop_assert!(l + r - 2.0 * m >= -1e-10);
        }

        #[test]
        fn prox_moves_right_and_is_nonexpansive(
            loss in loss_strategy(),
            a in -10.0f64..10.0,
            d in -3.0f64..3.0,
            b in 1e-3f64..10.0,
        ) {
            let p1 = loss.prox(a, b).unwrap();
            let p2 = loss.prox(a + d, b).unwrap();
            prop_assert!(p1 >= a - 1e-12);
            prop_assert!((p2 - p1) * d.signum() >= -1e-10);
            prop_assert!((p2 - p1).abs() <= d.abs() + 1e-10);
            // stationarity
            let g = loss.derivative(p1) + (p1 - a) / b;
            if loss.kind() != LossKind::Svm {
                prop_assert!(g.abs() < 1e-8 * (1.0 + 1.0 / b));
            }
        }
    }
}
