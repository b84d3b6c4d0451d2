//! Link functions, response families and the scalar objectives built on them.
//!
//! Losses drop terms that depend on `y` only:
//! * Gaussian: `(y - mu)^2 / 2`
//! * Poisson: `mu - y log mu`
//!
//! Objective values are therefore comparable across runs of one family, not
//! across families.

use crate::error::{check_len, GaimError, Result};
use serde::{Deserialize, Serialize};

/// Poisson means below this are floored inside the logarithm of the loss value.
/// Gradients never use the floor.
pub const POISSON_MEAN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkKind {
    Identity,
    Log,
    InverseSoftplus,
}

impl LinkKind {
    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Identity => "identity",
            LinkKind::Log => "log",
            LinkKind::InverseSoftplus => "inverse-softplus",
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = GaimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkKind::Identity),
            "log" | "exponential" => Ok(LinkKind::Log),
            "inverse-softplus" | "softplus" => Ok(LinkKind::InverseSoftplus),
            _ => Err(GaimError::InvalidArgument(format!("unknown link {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = GaimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            _ => Err(GaimError::InvalidArgument(format!("unknown family {s:?}"))),
        }
    }
}

/// Stable `log(1 + e^eta)`.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// An inverse link `g^{-1}` with its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: LinkKind,
}

impl LinkSpec {
    pub fn new(kind: LinkKind) -> Self {
        Self { kind }
    }

    pub fn identity() -> Self {
        Self::new(LinkKind::Identity)
    }

    pub fn log() -> Self {
        Self::new(LinkKind::Log)
    }

    pub fn inv_softplus() -> Self {
        Self::new(LinkKind::InverseSoftplus)
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Mean `mu = g^{-1}(eta)`.
    #[inline]
    pub fn inv_link(&self, eta: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => eta,
            LinkKind::Log => eta.exp(),
            LinkKind::InverseSoftplus => softplus(eta),
        }
    }

    #[inline]
    pub fn inv_link_deriv(&self, eta: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 1.0,
            LinkKind::Log => eta.exp(),
            LinkKind::InverseSoftplus => sigmoid(eta),
        }
    }

    /// The family for which this link is canonical, if any.
    pub fn canonical_family(&self) -> Option<Family> {
        match self.kind {
            LinkKind::Identity => Some(Family::Gaussian),
            LinkKind::Log => Some(Family::Poisson),
            LinkKind::InverseSoftplus => None,
        }
    }

    /// `g^{-1}(eta) - y`, the residual used by the VI operators.
    #[inline]
    pub fn residual(&self, y: f64, eta: f64) -> f64 {
        self.inv_link(eta) - y
    }

    /// `int_0^eta g^{-1}(s) ds`.
    pub fn integrated_mean(&self, eta: f64) -> Result<f64> {
        match self.kind {
            LinkKind::Identity => Ok(0.5 * eta * eta),
            LinkKind::Log => Ok(eta.exp_m1()),
            LinkKind::InverseSoftplus => {
                if !eta.is_finite() {
                    return Err(GaimError::Quadrature { upper: eta });
                }
                Ok(softplus_integral(eta))
            }
        }
    }
}

/// `B_{2k} / (2k + 1)!` for `k = 1..=10`.
const LI2_COEFS: [f64; 10] = [
    1.0 / 6.0 / 6.0,
    -1.0 / 30.0 / 120.0,
    1.0 / 42.0 / 5040.0,
    -1.0 / 30.0 / 362880.0,
    5.0 / 66.0 / 39916800.0,
    -691.0 / 2730.0 / 6227020800.0,
    7.0 / 6.0 / 1307674368000.0,
    -3617.0 / 510.0 / 355687428096000.0,
    43867.0 / 798.0 / 121645100408832000.0,
    -174611.0 / 330.0 / 51090942171709440000.0,
];

/// Dilogarithm `Li2(-e^s)` for `s <= 0`, from the Bernoulli series in `u = -ln(1 + e^s)`.
fn li2_neg_exp(s: f64) -> f64 {
    debug_assert!(s <= 0.0);
    let u = -s.exp().ln_1p();
    let u2 = u * u;
    let mut pow = u * u2;
    let mut tail = 0.0;
    for c in LI2_COEFS {
        tail += c * pow;
        pow *= u2;
    }
    u - 0.25 * u2 + tail
}

/// `int_0^eta softplus(s) ds = -Li2(-e^eta) - pi^2 / 12`, using the inversion
/// formula for `Li2` when `eta > 0`.
fn softplus_integral(eta: f64) -> f64 {
    const PI2_12: f64 = std::f64::consts::PI * std::f64::consts::PI / 12.0;
    if eta > 0.0 {
        PI2_12 + 0.5 * eta * eta + li2_neg_exp(-eta)
    } else {
        -li2_neg_exp(eta) - PI2_12
    }
}

/// `log(1 + e^eta)` as an inverse link.
pub fn inv_softplus_link() -> LinkSpec {
    LinkSpec::inv_softplus()
}

/// A response family used as a loss `l(y, mu)` by gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: Family,
}

impl LossSpec {
    pub fn new(family: Family) -> Self {
        Self { family }
    }

    pub fn gaussian() -> Self {
        Self::new(Family::Gaussian)
    }

    pub fn poisson() -> Self {
        Self::new(Family::Poisson)
    }

    /// Loss value; Poisson means are floored at [`POISSON_MEAN_FLOOR`] inside the log.
    #[inline]
    pub fn loss(&self, y: f64, mu: f64) -> f64 {
        match self.family {
            Family::Gaussian => 0.5 * (y - mu) * (y - mu),
            Family::Poisson => mu - y * mu.max(POISSON_MEAN_FLOOR).ln(),
        }
    }

    /// `d l(y, g^{-1}(eta)) / d eta`.
    ///
    /// For canonical pairs this is literally `link.residual(y, eta)`, so GD
    /// and VI produce the same floating-point updates.
    #[inline]
    pub fn dloss_deta(&self, y: f64, eta: f64, link: &LinkSpec) -> f64 {
        if link.canonical_family() == Some(self.family) {
            return link.residual(y, eta);
        }
        let mu = link.inv_link(eta);
        let dmu = link.inv_link_deriv(eta);
        match self.family {
            Family::Gaussian => (mu - y) * dmu,
            Family::Poisson => (1.0 - y / mu) * dmu,
        }
    }
}

/// Checks that responses are admissible for `family`.
pub fn validate_responses(family: Family, y: &[f64]) -> Result<()> {
    for (index, &v) in y.iter().enumerate() {
        let bad = match family {
            Family::Gaussian => (!v.is_finite()).then_some("not finite"),
            Family::Poisson => {
                (!(v >= 0.0 && v.fract() == 0.0)).then_some("not a nonnegative integer")
            }
        };
        if let Some(reason) = bad {
            return Err(GaimError::InvalidResponse {
                index,
                reason: format!("{v} is {reason}"),
            });
        }
    }
    Ok(())
}

/// Mean loss and how many Poisson means hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub floored: usize,
}

/// `(1/n) sum_i l(y_i, g^{-1}(eta_i))`.
pub fn neg_log_lik(family: Family, link: &LinkSpec, y: &[f64], eta: &[f64]) -> Result<LossValue> {
    check_len(y.len(), eta.len(), "linear predictor length")?;
    validate_responses(family, y)?;
    Ok(mean_loss(&LossSpec::new(family), link, y, eta))
}

/// [`neg_log_lik`] without response validation, for the optimizer's hot path.
pub(crate) fn mean_loss(loss: &LossSpec, link: &LinkSpec, y: &[f64], eta: &[f64]) -> LossValue {
    let mut total = 0.0;
    let mut floored = 0;
    for (&yi, &ei) in y.iter().zip(eta) {
        let mu = link.inv_link(ei);
        if loss.family == Family::Poisson && mu < POISSON_MEAN_FLOOR {
            floored += 1;
        }
        total += loss.loss(yi, mu);
    }
    LossValue {
        value: total / y.len() as f64,
        floored,
    }
}

/// Component-wise `g^{-1}(eta_i) - y_i`.
pub fn vi_residual(link: &LinkSpec, y: &[f64], eta: &[f64]) -> Result<Vec<f64>> {
    check_len(y.len(), eta.len(), "linear predictor length")?;
    Ok(y.iter().zip(eta).map(|(&yi, &ei)| link.residual(yi, ei)).collect())
}

/// Potential `(1/n) sum_i int_0^{eta_i} (g^{-1}(s) - y_i) ds`.
///
/// Its gradient in `eta_i` is the VI residual divided by `n`.
pub fn potential_qn(link: &LinkSpec, y: &[f64], eta: &[f64]) -> Result<f64> {
    check_len(y.len(), eta.len(), "linear predictor length")?;
    let mut total = 0.0;
    for (&yi, &ei) in y.iter().zip(eta) {
        total += link.integrated_mean(ei)? - yi * ei;
    }
    Ok(total / y.len() as f64)
}

const QUAD_MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(GaimError::Quadrature { upper: b });
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, b, fa, fm, fb, whole, tol, QUAD_MAX_DEPTH)
        .ok_or(GaimError::Quadrature { upper: b })
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Option<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return None;
    }
    if delta.abs() <= 15.0 * tol {
        return Some(left + right + delta / 15.0);
    }
    if depth == 0 {
        return None;
    }
    let l = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?;
    let r = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?;
    Some(l + r)
}
