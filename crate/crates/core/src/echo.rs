//! Echo-periodicity: specifications, verification on samples, and test
//! function generators.
//!
//! A function is echo-periodic with respect to `E0` when for every `e_k` in
//! `E0` there is a vector `v_k`, supported on the non-periodic directions
//! `e_l` with `l <= k`, such that `|f(. + e_k)| = |f(. + v_k)|`. Periodic
//! functions are the case `v_k = 0`. Echo vectors are stored in basis
//! coordinates.

use serde::{Deserialize, Serialize};
use ndarray::Dimension;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::OrderedBasis;
use crate::gridfn::{AxisSpec, GridFunction, Sample};

/// Which supported echo class a spec belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EchoClass {
    /// Every echo vector vanishes: `f` is `E0`-periodic.
    Periodic,
    /// Some `v_k` is a nonzero constant combination of earlier line directions.
    Shear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSpec {
    e0: Vec<bool>,
    /// `vectors[k]` is `v_k` in coordinates; zero for axes outside `E0`.
    vectors: Vec<Vec<f64>>,
}

impl EchoSpec {
    /// `vectors[k]` must be supported on `M_k = { l <= k : e_l not in E0 }`.
    pub fn new(e0: Vec<bool>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let d = e0.len();
        if vectors.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: vectors.len(),
            });
        }
        for (k, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            for (l, &c) in v.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::InvalidParameter(format!("echo vector v_{} is not finite", k + 1)));
                }
                let allowed = e0[k] && l <= k && !e0[l];
                if c != 0.0 && !allowed {
                    return Err(Error::UnsupportedEcho(format!(
                        "v_{} has a component along e_{}, outside M_{}",
                        k + 1,
                        l + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(Self { e0, vectors })
    }

    /// `E0`-periodic spec: every echo vector is zero.
    pub fn periodic(e0: Vec<bool>) -> Self {
        let d = e0.len();
        Self {
            e0,
            vectors: vec![vec![0.0; d]; d],
        }
    }

    /// The spec for `E0 = {}`.
    pub fn none(dim: usize) -> Self {
        Self::periodic(vec![false; dim])
    }

    /// Periodic flags read off the axis kinds.
    pub fn periodic_for(axes: &[AxisSpec]) -> Self {
        Self::periodic(axes.iter().map(AxisSpec::is_periodic).collect())
    }

    pub fn dim(&self) -> usize {
        self.e0.len()
    }

    pub fn e0(&self) -> &[bool] {
        &self.e0
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn class(&self) -> EchoClass {
        if self.vectors.iter().flatten().all(|c| *c == 0.0) {
            EchoClass::Periodic
        } else {
            EchoClass::Shear
        }
    }

    /// `M_k` for zero-based `k`: the non-periodic axes `l <= k`.
    pub fn m_set(&self, k: usize) -> Vec<usize> {
        (0..=k).filter(|&l| !self.e0[l]).collect()
    }

    /// Axes of `E0` must be periodic and all others line axes.
    pub fn check_axes(&self, axes: &[AxisSpec]) -> Result<()> {
        if axes.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: axes.len(),
            });
        }
        for (k, (ax, periodic)) in axes.iter().zip(&self.e0).enumerate() {
            if ax.is_periodic() != *periodic {
                return Err(Error::InvalidAxis(format!(
                    "axis {} is {} but e_{} is {} E0",
                    k + 1,
                    if ax.is_periodic() { "periodic" } else { "a line" },
                    k + 1,
                    if *periodic { "in" } else { "not in" }
                )));
            }
        }
        Ok(())
    }

    /// Coordinate displacement that realizes the lattice translation by `m`:
    /// on a line axis `l` it is `m_l + sum_{k in E0} m_k v_{k,l}`; periodic
    /// axes absorb their whole-period translations and get 0.
    pub fn line_displacement(&self, m: &[i64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|l| {
                if self.e0[l] {
                    return 0.0;
                }
                let echo: f64 = (0..d)
                    .filter(|&k| self.e0[k])
                    .map(|k| m[k] as f64 * self.vectors[k][l])
                    .sum();
                m[l] as f64 + echo
            })
            .collect()
    }
}

/// Result of [`verify_echo`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EchoCheck {
    pub passed: bool,
    pub worst_residual: f64,
    /// Zero-based axis `k` of the worst residual, if any point was compared.
    pub worst_axis: Option<usize>,
    /// Coordinates of the worst sample point.
    pub worst_at: Vec<f64>,
    pub compared: usize,
}

/// Checks `| |f(x + e_k)| - |f(x + v_k)| | <= tol (1 + max |f|)` at every
/// sample `x` whose periodic coordinate along `e_k` lies in the first period
/// and for which both translates are sampled. Translates past the stored
/// periods wrap around.
pub fn verify_echo<T: Sample>(f: &GridFunction<T>, spec: &EchoSpec, tol: f64) -> Result<EchoCheck> {
    spec.check_axes(f.axes())?;
    let axes = f.axes();
    let samples = f.samples();
    let shape = samples.shape().to_vec();
    let scale = 1.0 + f.max_magnitude();
    let mut check = EchoCheck {
        passed: true,
        worst_residual: 0.0,
        worst_axis: None,
        worst_at: Vec::new(),
        compared: 0,
    };
    let mut any_e0 = false;
    for k in (0..spec.dim()).filter(|&k| spec.e0[k]) {
        any_e0 = true;
        let AxisSpec::Periodic { cells, .. } = axes[k] else { unreachable!() };
        let v_cells: Vec<i64> = spec.vectors[k]
            .iter()
            .enumerate()
            .map(|(l, &c)| if c == 0.0 { Ok(0) } else { axes[l].offset_cells(l, c) })
            .collect::<Result<_>>()?;
        let mut compared_k = 0usize;
        let mut a_idx = vec![0usize; shape.len()];
        let mut b_idx = vec![0usize; shape.len()];
        for (idx, _) in samples.indexed_iter() {
            let idx = idx.slice();
            if idx[k] >= cells {
                continue;
            }
            a_idx.copy_from_slice(idx);
            a_idx[k] = (idx[k] + cells) % shape[k];
            let mut inside = true;
            for l in 0..shape.len() {
                let j = idx[l] as i64 + v_cells[l];
                if j < 0 || j >= shape[l] as i64 {
                    inside = false;
                    break;
                }
                b_idx[l] = j as usize;
            }
            if !inside {
                continue;
            }
            compared_k += 1;
            let r = (samples[a_idx.as_slice()].magnitude() - samples[b_idx.as_slice()].magnitude()).abs();
            if r > check.worst_residual || check.worst_axis.is_none() {
                check.worst_residual = check.worst_residual.max(r);
                check.worst_axis = Some(k);
                check.worst_at = f.midpoint(idx);
            }
        }
        if compared_k == 0 {
            let ax = &axes[k];
            return Err(Error::Coverage {
                axis: k,
                needed_lo: ax.origin(),
                needed_hi: ax.end(),
                lo: ax.origin(),
                hi: ax.end(),
            });
        }
        check.compared += compared_k;
    }
    if any_e0 {
        check.passed = check.worst_residual <= tol * scale;
    }
    Ok(check)
}

/// `x -> f(x + n e_k)` on the base window, read directly from the stored
/// periods along the periodic axis `k` (requires `n + 1` stored periods).
pub fn translate<T: Sample>(f: &GridFunction<T>, k: usize, n: usize) -> Result<GridFunction<T>> {
    let AxisSpec::Periodic { cells, periods } = f.axes()[k] else {
        return Err(Error::InvalidAxis(format!("axis {} is not periodic", k + 1)));
    };
    if n + 1 > periods {
        return Err(Error::Coverage {
            axis: k,
            needed_lo: n as f64,
            needed_hi: (n + 1) as f64,
            lo: 0.0,
            hi: periods as f64,
        });
    }
    let mut view = f.samples().view();
    view.slice_axis_inplace(ndarray::Axis(k), ndarray::Slice::from(n * cells..(n + 1) * cells));
    let mut axes = f.axes().to_vec();
    axes[k] = AxisSpec::Periodic { cells, periods: 1 };
    let base_axes: Vec<AxisSpec> = axes.iter().map(AxisSpec::base).collect();
    let mut out = view.to_owned();
    for (l, ax) in f.axes().iter().enumerate() {
        if l != k {
            out.slice_axis_inplace(ndarray::Axis(l), ndarray::Slice::from(0..ax.base_cells()));
        }
    }
    GridFunction::from_samples(f.basis().clone(), base_axes, out.as_standard_layout().into_owned())
}

/// Gaussian factor `exp(-(u - center)^2 / (2 sigma^2))` on a line axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    pub center: f64,
    pub sigma: f64,
}

impl GaussianFactor {
    pub fn eval(&self, u: f64) -> f64 {
        let z = (u - self.center) / self.sigma;
        (-0.5 * z * z).exp()
    }

    /// Upper bound on the fraction of the `L^1` mass of `|g|^p` lying outside
    /// `[lo, hi]` (Mills-ratio tail bound on both sides).
    pub fn outside_fraction(&self, lo: f64, hi: f64, p: f64) -> f64 {
        if p.is_infinite() {
            return 0.0;
        }
        let s = self.sigma / p.sqrt();
        let tail = |t: f64| {
            if t <= 0.0 {
                1.0
            } else {
                (s * (-0.5 * (t / s).powi(2)).exp() / (t * (2.0 * PI).sqrt())).min(1.0)
            }
        };
        tail(self.center - lo) + tail(hi - self.center)
    }
}

/// Trigonometric factor `offset + sum_j amp_j cos(2 pi freq_j y + phase_j)` on
/// a periodic axis; `freq_j` must be integers so the factor is 1-periodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigFactor {
    pub offset: f64,
    pub terms: Vec<TrigTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub freq: i64,
    pub amp: f64,
    pub phase: f64,
}

impl TrigFactor {
    pub fn constant(offset: f64) -> Self {
        Self {
            offset,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        self.terms.iter().fold(self.offset, |acc, t| {
            acc + t.amp * (2.0 * PI * t.freq as f64 * y + t.phase).cos()
        })
    }

    /// Lower bound `offset - sum |amp|` of the factor.
    pub fn lower_bound(&self) -> f64 {
        self.offset - self.terms.iter().map(|t| t.amp.abs()).sum::<f64>()
    }
}

/// The built-in generator families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Trigonometric sums on periodic axes, `v_k = 0`.
    PeriodicTrig,
    /// Gaussians on line axes times a periodic factor, `v_k = 0`.
    GaussianLine,
    /// Gaussian bumps transported along earlier line axes so that
    /// `|f(. + e_k)| = |f(. + v_k)|` holds with the declared `v_k`.
    ShearEcho,
}

/// Product-form generator: `prod_l G_l(u_l) * prod_k T_k(y_k)` where on a
/// line axis `u_l = x_l + sum_{k in E0} v_{k,l} y_k` and `y_k` is the periodic
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    /// One Gaussian per axis; ignored on periodic axes.
    pub gaussians: Vec<GaussianFactor>,
    /// One trigonometric factor per axis; ignored on line axes.
    pub trig: Vec<TrigFactor>,
    /// Echo vectors in coordinates; must be zero unless `kind` is `ShearEcho`.
    pub echo: Vec<Vec<f64>>,
    /// Require the output to be nonnegative (harness use).
    pub nonnegative: bool,
}

impl GeneratorSpec {
    pub fn simple(kind: GeneratorKind, dim: usize) -> Self {
        Self {
            kind,
            gaussians: vec![
                GaussianFactor {
                    center: 0.0,
                    sigma: 1.0
                };
                dim
            ],
            trig: vec![
                TrigFactor {
                    offset: 2.0,
                    terms: vec![TrigTerm {
                        freq: 1,
                        amp: 1.0,
                        phase: 0.0
                    }],
                };
                dim
            ],
            echo: vec![vec![0.0; dim]; dim],
            nonnegative: true,
        }
    }
}

/// Samples a generator on `axes` and returns it with its echo spec.
///
/// Sheared line arguments are assembled from whole cell counts first, so the
/// echo identity holds bit-for-bit on aligned grids.
pub fn generate(basis: &OrderedBasis, axes: &[AxisSpec], spec: &GeneratorSpec) -> Result<(GridFunction, EchoSpec)> {
    let d = axes.len();
    if spec.gaussians.len() != d || spec.trig.len() != d || spec.echo.len() != d {
        return Err(Error::InvalidParameter(format!(
            "generator needs one factor and echo vector per axis (d = {d})"
        )));
    }
    let e0: Vec<bool> = axes.iter().map(AxisSpec::is_periodic).collect();
    let echo = EchoSpec::new(e0.clone(), spec.echo.clone())?;
    if echo.class() == EchoClass::Shear && spec.kind != GeneratorKind::ShearEcho {
        return Err(Error::InvalidParameter(format!(
            "{:?} generators have zero echo vectors",
            spec.kind
        )));
    }
    for (l, g) in spec.gaussians.iter().enumerate() {
        if !e0[l] && !(g.sigma > 0.0 && g.sigma.is_finite() && g.center.is_finite()) {
            return Err(Error::InvalidParameter(format!("gaussian on axis {} needs sigma > 0", l + 1)));
        }
    }
    for (k, t) in spec.trig.iter().enumerate() {
        if !e0[k] {
            continue;
        }
        if spec.nonnegative && t.lower_bound() < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "trigonometric factor on axis {} can be negative",
                k + 1
            )));
        }
    }
    // integer cell counts of each echo component
    let mut shear_cells = vec![vec![0i64; d]; d];
    for (k, row) in shear_cells.iter_mut().enumerate() {
        for (l, cells) in row.iter_mut().enumerate() {
            let c = echo.vector(k)[l];
            if c != 0.0 {
                *cells = axes[l].offset_cells(l, c)?;
            }
        }
    }
    let mut y_local = vec![0.0; d];
    let mut period = vec![0i64; d];
    let f = GridFunction::from_index_fn(basis, axes, |idx| {
        for k in 0..d {
            if let AxisSpec::Periodic { cells, .. } = axes[k] {
                period[k] = (idx[k] / cells) as i64;
                y_local[k] = ((idx[k] % cells) as f64 + 0.5) / cells as f64;
            }
        }
        let mut value = 1.0;
        for l in 0..d {
            match axes[l] {
                AxisSpec::Periodic { .. } => value *= spec.trig[l].eval(y_local[l]),
                AxisSpec::Line { lo, .. } => {
                    let h = axes[l].cell_width();
                    let mut whole = idx[l] as i64;
                    let mut frac = 0.0;
                    for k in (0..d).filter(|&k| e0[k]) {
                        whole += period[k] * shear_cells[k][l];
                        frac += echo.vector(k)[l] * y_local[k];
                    }
                    let u = lo + h * (whole as f64 + 0.5) + frac;
                    value *= spec.gaussians[l].eval(u);
                }
            }
        }
        value
    })?;
    Ok((f, echo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{mixed_norm, ExponentVector};
    use crate::weights::Weight;

    #[test]
    fn spec_support_rules() {
        // v_2 along e_1 with e_1 a line axis: allowed
        assert!(EchoSpec::new(vec![false, true], vec![vec![0.0, 0.0], vec![0.5, 0.0]]).is_ok());
        // v_1 cannot reach a later axis
        let err = EchoSpec::new(vec![true, false], vec![vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::UnsupportedEcho(_)));
        // nor a periodic one
        assert!(EchoSpec::new(vec![true, true], vec![vec![0.0; 2], vec![1.0, 0.0]]).is_err());
        let s = EchoSpec::new(vec![false, true, true], vec![vec![0.0; 3], vec![0.25, 0.0, 0.0], vec![0.0; 3]]).unwrap();
        assert_eq!(s.m_set(2), vec![0]);
        assert_eq!(s.class(), EchoClass::Shear);
        assert_eq!(s.line_displacement(&[1, 2, -1]), vec![1.5, 0.0, 0.0]);
    }

    #[test]
    fn periodic_function_passes_with_zero_residual() {
        let b = OrderedBasis::standard(1);
        for periods in [1, 2] {
            let ax = AxisSpec::periodic_extended(32, periods).unwrap();
            let f = GridFunction::sample(&b, &[ax], |x| 2.0 + (2.0 * PI * x[0]).cos()).unwrap();
            let c = verify_echo(&f, &EchoSpec::periodic(vec![true]), 1e-12).unwrap();
            assert!(c.passed);
            assert!(c.worst_residual < 1e-12);
        }
    }

    #[test]
    fn identity_violation_is_detected() {
        let b = OrderedBasis::standard(2);
        let axes = [AxisSpec::line(-4.0, 4.0, 32).unwrap(), AxisSpec::periodic(8).unwrap()];
        let f = GridFunction::sample(&b, &axes, |x| x[0]).unwrap();
        let spec = EchoSpec::new(vec![false, true], vec![vec![0.0; 2], vec![1.0, 0.0]]).unwrap();
        let c = verify_echo(&f, &spec, 1e-9).unwrap();
        assert!(!c.passed);
        assert!((c.worst_residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_e0_is_vacuous() {
        let b = OrderedBasis::standard(1);
        let f = GridFunction::sample(&b, &[AxisSpec::line(0.0, 1.0, 4).unwrap()], |x| x[0]).unwrap();
        let c = verify_echo(&f, &EchoSpec::none(1), 0.0).unwrap();
        assert!(c.passed && c.compared == 0);
    }

    #[test]
    fn shear_generator_is_exact() {
        let b = OrderedBasis::standard(2);
        let axes = [AxisSpec::line(-6.0, 6.0, 96).unwrap(), AxisSpec::periodic_extended(16, 3).unwrap()];
        let mut spec = GeneratorSpec::simple(GeneratorKind::ShearEcho, 2);
        spec.echo[1] = vec![1.0, 0.0];
        spec.gaussians[0].sigma = 0.6;
        let (f, echo) = generate(&b, &axes, &spec).unwrap();
        let c = verify_echo(&f, &echo, 1e-9).unwrap();
        assert!(c.passed);
        assert_eq!(c.worst_residual, 0.0);
        assert!(f.samples().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn misaligned_shear_is_rejected() {
        let b = OrderedBasis::standard(2);
        let axes = [AxisSpec::line(-4.0, 4.0, 32).unwrap(), AxisSpec::periodic(8).unwrap()];
        let mut spec = GeneratorSpec::simple(GeneratorKind::ShearEcho, 2);
        spec.echo[1] = vec![0.1, 0.0];
        assert!(matches!(generate(&b, &axes, &spec), Err(Error::Alignment { .. })));
    }

    #[test]
    fn trig_generator_is_positive_and_periodic() {
        let b = OrderedBasis::standard(1);
        let ax = AxisSpec::periodic_extended(64, 2).unwrap();
        let (f, echo) = generate(&b, &[ax], &GeneratorSpec::simple(GeneratorKind::PeriodicTrig, 1)).unwrap();
        assert!(f.samples().iter().fold(f64::INFINITY, |m, v| m.min(*v)) >= 1.0);
        assert!(verify_echo(&f, &echo, 1e-9).unwrap().passed);
    }

    #[test]
    fn gaussian_tail_bound() {
        let g = GaussianFactor {
            center: 0.0,
            sigma: 1.0,
        };
        assert!(g.outside_fraction(-6.0, 6.0, 1.0) < 1e-6);
        assert!(g.outside_fraction(-1.0, 1.0, 1.0) > 0.1);
    }

    #[test]
    fn translated_norm_is_invariant() {
        let b = OrderedBasis::standard(2);
        let axes = [AxisSpec::line(-8.0, 8.0, 128).unwrap(), AxisSpec::periodic_extended(16, 3).unwrap()];
        let mut spec = GeneratorSpec::simple(GeneratorKind::ShearEcho, 2);
        spec.echo[1] = vec![0.5, 0.0];
        spec.gaussians[0].sigma = 0.5;
        let (f, _) = generate(&b, &axes, &spec).unwrap();
        let base = f.base();
        for p in ["1,1", "0.5,2", "inf,0.25"] {
            let p: ExponentVector = p.parse().unwrap();
            let n0 = mixed_norm(&base, &p, &Weight::constant()).unwrap();
            for n in 1..3 {
                let g = translate(&f, 1, n).unwrap();
                let n1 = mixed_norm(&g, &p, &Weight::constant()).unwrap();
                assert!((n1 - n0).abs() <= 1e-9 * n0, "{p} n={n}: {n0} vs {n1}");
            }
        }
        assert!(translate(&f, 1, 3).is_err());
    }
}
