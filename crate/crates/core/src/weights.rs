//! Weight functions, empirical moderateness certificates, and the
//! periodicity-compatibility condition a weight must satisfy along `E0`.
//!
//! `|x|` is always the Euclidean norm of the *physical* point.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::OrderedBasis;

/// Closed-form weight families plus user-supplied maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightFamily {
    Constant,
    /// `e^{r|x|}`, `r >= 0`.
    Exponential { r: f64 },
    /// `(1 + |x|)^s`.
    Polynomial { s: f64 },
    User { name: String },
}

impl fmt::Display for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFamily::Constant => write!(f, "constant"),
            WeightFamily::Exponential { r } => write!(f, "exp:{r}"),
            WeightFamily::Polynomial { s } => write!(f, "poly:{s}"),
            WeightFamily::User { name } => write!(f, "user:{name}"),
        }
    }
}

impl FromStr for WeightFamily {
    type Err = Error;

    /// Parses `constant`, `exp:<r>` or `poly:<s>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "constant" {
            return Ok(WeightFamily::Constant);
        }
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad weight parameter in `{s}`")))
        };
        match s.split_once(':') {
            Some(("exp", r)) => Ok(WeightFamily::Exponential { r: parse(r)? }),
            Some(("poly", p)) => Ok(WeightFamily::Polynomial { s: parse(p)? }),
            _ => Err(Error::Parse(format!(
                "unknown weight `{s}` (expected constant | exp:r | poly:s)"
            ))),
        }
    }
}

type UserFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone)]
struct Projection {
    basis: OrderedBasis,
    keep: Vec<bool>,
}

/// A positive weight on `R^d`.
#[derive(Clone)]
pub struct Weight {
    family: WeightFamily,
    user: Option<UserFn>,
    projection: Option<Projection>,
}

impl fmt::Debug for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Weight")
            .field("family", &self.family)
            .field("projected", &self.projection.as_ref().map(|p| &p.keep))
            .finish()
    }
}

/// Builds a closed-form weight.
pub fn make_weight(family: WeightFamily) -> Result<Weight> {
    match &family {
        WeightFamily::Constant => {}
        WeightFamily::Exponential { r } => {
            if !(r.is_finite() && *r >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "exponential weight needs finite r >= 0, got {r}"
                )));
            }
        }
        WeightFamily::Polynomial { s } => {
            if !s.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "polynomial weight needs a finite exponent, got {s}"
                )));
            }
        }
        WeightFamily::User { .. } => {
            return Err(Error::InvalidParameter(
                "user weights are built with Weight::user".into(),
            ))
        }
    }
    Ok(Weight {
        family,
        user: None,
        projection: None,
    })
}

impl Weight {
    pub fn constant() -> Self {
        make_weight(WeightFamily::Constant).unwrap()
    }

    /// Wraps a user map, rejecting it if it is not positive and finite at
    /// every one of `samples`.
    pub fn user<F>(name: &str, f: F, samples: &[Vec<f64>]) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let w = Weight {
            family: WeightFamily::User { name: name.into() },
            user: Some(Arc::new(f)),
            projection: None,
        };
        w.check_positive(samples)?;
        Ok(w)
    }

    pub fn family(&self) -> &WeightFamily {
        &self.family
    }

    pub fn is_constant(&self) -> bool {
        self.family == WeightFamily::Constant
    }

    /// Returns the weight `x -> w(x_0)` where `x_0` keeps only the basis
    /// components flagged in `keep`. Such a weight satisfies the
    /// compatibility condition for `E0 = { e_k : !keep[k] }` by construction.
    pub fn restricted(&self, basis: &OrderedBasis, keep: &[bool]) -> Result<Self> {
        if keep.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                found: keep.len(),
            });
        }
        Ok(Weight {
            projection: Some(Projection {
                basis: basis.clone(),
                keep: keep.to_vec(),
            }),
            ..self.clone()
        })
    }

    pub fn describe(&self) -> String {
        match &self.projection {
            None => self.family.to_string(),
            Some(p) => {
                let axes: Vec<String> = p
                    .keep
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| **k)
                    .map(|(i, _)| (i + 1).to_string())
                    .collect();
                format!("{}@axes[{}]", self.family, axes.join(","))
            }
        }
    }

    /// Evaluates the weight at the physical point `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.projection {
            None => self.eval_base(x),
            Some(p) => {
                let mut c = p.basis.coordinates_fast(x);
                for (ck, keep) in c.iter_mut().zip(&p.keep) {
                    if !keep {
                        *ck = 0.0;
                    }
                }
                self.eval_base(&p.basis.to_physical(&c))
            }
        }
    }

    fn eval_base(&self, x: &[f64]) -> f64 {
        let norm = || x.iter().map(|v| v * v).sum::<f64>().sqrt();
        match &self.family {
            WeightFamily::Constant => 1.0,
            WeightFamily::Exponential { r } => (r * norm()).exp(),
            WeightFamily::Polynomial { s } => (1.0 + norm()).powf(*s),
            WeightFamily::User { .. } => (self.user.as_ref().expect("user map"))(x),
        }
    }

    pub fn check_positive(&self, samples: &[Vec<f64>]) -> Result<()> {
        for x in samples {
            let value = self.eval(x);
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Positivity {
                    weight: self.describe(),
                    at: x.clone(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Where a certificate samples its base points.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleRegion {
    /// Tensor grid of `points` equispaced values per axis, endpoints included.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        points: usize,
    },
    Points(Vec<Vec<f64>>),
}

impl SampleRegion {
    /// Default number of sample points per axis.
    pub const DEFAULT_POINTS: usize = 17;

    pub fn cube(dim: usize, half_width: f64) -> Self {
        SampleRegion::Box {
            lo: vec![-half_width; dim],
            hi: vec![half_width; dim],
            points: Self::DEFAULT_POINTS,
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        match self {
            SampleRegion::Points(p) => p.clone(),
            SampleRegion::Box { lo, hi, points } => {
                let n = (*points).max(1);
                let mut out = vec![Vec::with_capacity(lo.len())];
                for (a, b) in lo.iter().zip(hi) {
                    let axis: Vec<f64> = if n == 1 {
                        vec![0.5 * (a + b)]
                    } else {
                        (0..n)
                            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                            .collect()
                    };
                    out = out
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&v| {
                                let mut q = p.clone();
                                q.push(v);
                                q
                            })
                        })
                        .collect();
                }
                out
            }
        }
    }
}

/// The empirical constant `C` in `w(x + y) <= C w(x) v(y)` over sampled pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModerationCertificate {
    pub weight: String,
    pub envelope: String,
    pub constant: f64,
    pub worst_x: Vec<f64>,
    pub worst_shift: Vec<f64>,
    pub pairs: usize,
}

/// Largest ratio `w(x+y) / (w(x) v(y))` over `x` in `region`, `y` in `shifts`.
/// This is a lower estimate of the true moderateness constant on the region.
pub fn moderate_constant(
    weight: &Weight,
    envelope: &Weight,
    region: &SampleRegion,
    shifts: &[Vec<f64>],
) -> Result<f64> {
    Ok(certify(weight, envelope, region, shifts)?.constant)
}

pub fn certify(
    weight: &Weight,
    envelope: &Weight,
    region: &SampleRegion,
    shifts: &[Vec<f64>],
) -> Result<ModerationCertificate> {
    let base = region.points();
    if base.is_empty() || shifts.is_empty() {
        return Err(Error::InvalidParameter(
            "moderateness needs a nonempty region and shift set".into(),
        ));
    }
    let pairs = base
        .iter()
        .flat_map(|x| shifts.iter().map(move |y| (x.as_slice(), y.as_slice())));
    certify_pairs(weight, envelope, pairs)
}

/// Certificate over an explicit list of `(x, y)` pairs.
pub fn certify_pairs<'a, I>(weight: &Weight, envelope: &Weight, pairs: I) -> Result<ModerationCertificate>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let mut best = f64::NEG_INFINITY;
    let mut worst_x = Vec::new();
    let mut worst_shift = Vec::new();
    let mut count = 0usize;
    let mut sum = Vec::new();
    for (x, y) in pairs {
        count += 1;
        sum.clear();
        sum.extend(x.iter().zip(y).map(|(a, b)| a + b));
        let ratio = weight.eval(&sum) / (weight.eval(x) * envelope.eval(y));
        if !ratio.is_finite() {
            return Err(Error::Numeric {
                context: format!("moderateness ratio at x = {x:?}, y = {y:?}"),
            });
        }
        if ratio > best {
            best = ratio;
            worst_x = x.to_vec();
            worst_shift = y.to_vec();
        }
    }
    if count == 0 {
        return Err(Error::InvalidParameter(
            "moderateness needs at least one sample pair".into(),
        ));
    }
    Ok(ModerationCertificate {
        weight: weight.describe(),
        envelope: envelope.describe(),
        constant: best,
        worst_x,
        worst_shift,
        pairs: count,
    })
}

/// Outcome of [`check_submultiplicative`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmultiplicativeCheck {
    pub holds: bool,
    pub evenness_residual: f64,
    pub evenness_witness: Vec<f64>,
    pub moderate_constant: f64,
    pub worst_pair: (Vec<f64>, Vec<f64>),
}

pub const SUBMULTIPLICATIVE_TOLERANCE: f64 = 1e-9;
const EVENNESS_TOLERANCE: f64 = 1e-10;

/// `v` is submultiplicative on the samples if it is even (to `1e-10`
/// relative) and `v(x + y) <= (1 + tol) v(x) v(y)`.
pub fn check_submultiplicative(
    v: &Weight,
    region: &SampleRegion,
    shifts: &[Vec<f64>],
    tol: f64,
) -> Result<SubmultiplicativeCheck> {
    let mut residual = 0.0f64;
    let mut witness = Vec::new();
    let points = region.points();
    for x in points.iter().chain(shifts) {
        let neg: Vec<f64> = x.iter().map(|t| -t).collect();
        let (a, b) = (v.eval(x), v.eval(&neg));
        let r = (a - b).abs() / a.abs().max(b.abs());
        if r > residual {
            residual = r;
            witness = x.clone();
        }
    }
    let cert = certify(v, v, region, shifts)?;
    Ok(SubmultiplicativeCheck {
        holds: residual <= EVENNESS_TOLERANCE && cert.constant <= 1.0 + tol,
        evenness_residual: residual,
        evenness_witness: witness,
        moderate_constant: cert.constant,
        worst_pair: (cert.worst_x, cert.worst_shift),
    })
}

/// Outcome of [`check_e0_compatibility`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatibilityCheck {
    pub holds: bool,
    pub worst_residual: f64,
    /// Coordinates of the worst sample point.
    pub witness: Vec<f64>,
}

/// Checks `w(sum_k x_k e_k) = w(sum_{k not in E0} x_k e_k)` on sampled
/// coordinate points of `region` (given in basis coordinates).
pub fn check_e0_compatibility(
    weight: &Weight,
    basis: &OrderedBasis,
    e0: &[bool],
    region: &SampleRegion,
    tol: f64,
) -> Result<CompatibilityCheck> {
    if e0.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: e0.len(),
        });
    }
    let mut worst = 0.0f64;
    let mut witness = Vec::new();
    let points = region.points();
    if points.is_empty() {
        return Err(Error::InvalidParameter("empty compatibility region".into()));
    }
    for c in points {
        let reduced: Vec<f64> = c
            .iter()
            .zip(e0)
            .map(|(v, periodic)| if *periodic { 0.0 } else { *v })
            .collect();
        let full = weight.eval(&basis.to_physical(&c));
        let base = weight.eval(&basis.to_physical(&reduced));
        let r = (full - base).abs() / full.abs().max(base.abs());
        if r > worst || witness.is_empty() {
            worst = worst.max(r);
            witness = c;
        }
    }
    Ok(CompatibilityCheck {
        holds: worst <= tol,
        worst_residual: worst,
        witness,
    })
}
