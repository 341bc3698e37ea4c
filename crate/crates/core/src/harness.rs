//! End-to-end numerical checks of the mixed-norm convolution inequality
//! `||a *_[E] f||_{L^p_(w)} <= C ||a||_{l^r_(v)} ||f||_{L^p_(w)}`.
//!
//! An [`InstanceSpec`] describes an experiment independently of the grid; it
//! is sampled at a resolution `n` (cells per axis of the region `I`) into a
//! [`TheoremInstance`]. On line axes `I` is the region of interest
//! `[-L, L]`, and `f` is sampled on `I` dilated by the largest displacement
//! the support of `a` produces, so every term of the convolution on `I` reads
//! sampled values. The right-hand side uses the norm of `f` over that whole
//! window. With this bookkeeping the grid version of the inequality holds with
//! constant 1 in the unweighted case and quadrature only enters through
//! refinement drift.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convolution::{discrete_convolve, semi_discrete_convolve};
use crate::echo::{generate, verify_echo, EchoClass, EchoSpec, GaussianFactor, GeneratorKind, GeneratorSpec, TrigFactor, TrigTerm};
use crate::error::{Error, Result};
use crate::geometry::{Lattice, OrderedBasis};
use crate::gridfn::{AxisSpec, GridFunction};
use crate::norms::{
    discrete_iterated_norms, discrete_mixed_norm, iterated_norms, mixed_norm, running_min_exponent,
    validate_exponent_pair, ExponentVector, LatticeSequence,
};
use crate::weights::{
    check_e0_compatibility, check_submultiplicative, make_weight, SampleRegion, Weight, WeightFamily,
    SUBMULTIPLICATIVE_TOLERANCE,
};

/// Default relative allowance for quadrature error.
pub const DEFAULT_MARGIN: f64 = 0.05;
/// Default half-width `L` of the region of interest on line axes.
pub const DEFAULT_HALF_WIDTH: f64 = 4.0;
/// Tail mass of a generated `f` allowed outside its window, relative.
pub const TAIL_LIMIT: f64 = 1e-6;
const ECHO_TOLERANCE: f64 = 1e-9;
const MAX_SHEAR_SPREAD: f64 = 0.5;

mod family_text {
    use crate::weights::WeightFamily;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(w: &WeightFamily, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&w.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<WeightFamily, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_true() -> bool {
    true
}

fn default_half_width() -> f64 {
    DEFAULT_HALF_WIDTH
}

/// A resolution-independent description of one instance of the inequality.
///
/// `f` is the product generator of [`crate::echo`]: a Gaussian on every line
/// axis (sheared by the echo vectors) times a trigonometric factor on every
/// periodic axis. Axes flagged in `e0` are periodic, the others are lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    /// Row-major `T_E`; empty means the standard basis.
    #[serde(default)]
    pub basis: Vec<f64>,
    pub e0: Vec<bool>,
    /// Echo vectors in coordinates, one per axis; empty means all zero.
    #[serde(default)]
    pub echo: Vec<Vec<f64>>,
    pub gaussians: Vec<GaussianFactor>,
    pub trig: Vec<TrigFactor>,
    #[serde(with = "family_text")]
    pub omega: WeightFamily,
    #[serde(with = "family_text")]
    pub v: WeightFamily,
    /// Apply `omega` through its restriction to the line directions, which
    /// makes it compatible with the periodic directions.
    #[serde(default = "default_true")]
    pub omega_on_lines: bool,
    pub p: ExponentVector,
    pub r: ExponentVector,
    /// `(index, value)` pairs of the sequence `a`.
    pub a: Vec<(Vec<i64>, f64)>,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

impl InstanceSpec {
    pub fn dim(&self) -> usize {
        self.e0.len()
    }

    pub fn is_weighted(&self) -> bool {
        self.omega != WeightFamily::Constant || self.v != WeightFamily::Constant
    }

    fn basis(&self) -> Result<OrderedBasis> {
        if self.basis.is_empty() {
            Ok(OrderedBasis::standard(self.dim()))
        } else {
            OrderedBasis::from_row_major(self.dim(), &self.basis)
        }
    }

    fn echo_vectors(&self) -> Vec<Vec<f64>> {
        if self.echo.is_empty() {
            vec![vec![0.0; self.dim()]; self.dim()]
        } else {
            self.echo.clone()
        }
    }

    /// The sequence `a` on the lattice of the instance basis.
    pub fn sequence(&self) -> Result<LatticeSequence> {
        LatticeSequence::from_entries(Lattice::new(self.basis()?), self.a.iter().cloned())
    }

    /// Samples the instance with `resolution` cells per axis of `I`.
    pub fn build(&self, resolution: usize) -> Result<TheoremInstance> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidParameter("instances need at least one axis".into()));
        }
        for found in [self.p.dim(), self.r.dim(), self.gaussians.len(), self.trig.len()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        if resolution == 0 {
            return Err(Error::InvalidParameter("resolution must be positive".into()));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::InvalidParameter("half_width must be positive".into()));
        }
        let basis = self.basis()?;
        let echo = EchoSpec::new(self.e0.clone(), self.echo_vectors())?;
        let a = self.sequence()?;
        let shear = echo.class() == EchoClass::Shear;
        let periods = if shear { 2 } else { 1 };
        let l = self.half_width;
        let h = 2.0 * l / resolution as f64;

        let mut roi = Vec::with_capacity(d);
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            if self.e0[k] {
                roi.push(AxisSpec::periodic(resolution)?);
                axes.push(AxisSpec::periodic_extended(resolution, periods)?);
                continue;
            }
            let line = AxisSpec::line(-l, l, resolution)?;
            let mut lo_shift = 0i64;
            let mut hi_shift = 0i64;
            for (m, _) in a.iter() {
                let cells = line.offset_cells(k, echo.line_displacement(m)[k])?;
                lo_shift = lo_shift.min(cells);
                hi_shift = hi_shift.max(cells);
            }
            roi.push(line);
            let lo = -l - hi_shift as f64 * h;
            let hi = l - lo_shift as f64 * h;
            axes.push(AxisSpec::line(lo, hi, resolution + (hi_shift - lo_shift) as usize)?);
        }
        self.check_tails(&axes, &echo, periods)?;

        let kind = if shear {
            GeneratorKind::ShearEcho
        } else if self.e0.iter().all(|&p| p) {
            GeneratorKind::PeriodicTrig
        } else {
            GeneratorKind::GaussianLine
        };
        let generator = GeneratorSpec {
            kind,
            gaussians: self.gaussians.clone(),
            trig: self.trig.clone(),
            echo: self.echo_vectors(),
            nonnegative: true,
        };
        let (f, _) = generate(&basis, &axes, &generator)?;

        let mut omega = make_weight(self.omega.clone())?;
        if self.omega_on_lines && self.e0.iter().any(|&p| p) {
            let keep: Vec<bool> = self.e0.iter().map(|p| !p).collect();
            omega = omega.restricted(&basis, &keep)?;
        }
        let v = make_weight(self.v.clone())?;
        Ok(TheoremInstance {
            spec: self.clone(),
            resolution,
            basis,
            echo,
            omega,
            v,
            a,
            f,
            roi,
        })
    }

    /// Gaussian tail bound of `|f|^{p_l}` outside each line window, with the
    /// centre swept over all positions the shear produces.
    fn check_tails(&self, axes: &[AxisSpec], echo: &EchoSpec, periods: usize) -> Result<()> {
        for (l, ax) in axes.iter().enumerate() {
            let AxisSpec::Line { lo, hi, .. } = *ax else { continue };
            let g = self.gaussians[l];
            let spread: f64 = (0..self.dim())
                .filter(|&k| self.e0[k])
                .map(|k| echo.vector(k)[l].abs() * periods as f64)
                .sum();
            let worst = [g.center - spread, g.center + spread]
                .into_iter()
                .map(|c| GaussianFactor { center: c, ..g }.outside_fraction(lo, hi, self.p.entries()[l]))
                .fold(0.0, f64::max);
            if worst > TAIL_LIMIT {
                return Err(Error::InsufficientDecay(format!(
                    "axis {}: about {worst:.2e} of the mass of |f|^p lies outside [{lo}, {hi}]",
                    l + 1
                )));
            }
        }
        Ok(())
    }
}

/// An [`InstanceSpec`] sampled at one resolution.
#[derive(Debug, Clone)]
pub struct TheoremInstance {
    pub spec: InstanceSpec,
    pub resolution: usize,
    pub basis: OrderedBasis,
    pub echo: EchoSpec,
    pub omega: Weight,
    pub v: Weight,
    pub a: LatticeSequence,
    /// `f` on the dilated window; periodic axes store two periods for shear
    /// echoes so the echo identity can be checked on data.
    pub f: GridFunction,
    /// The region `I` on which `a *_[E] f` is evaluated.
    pub roi: Vec<AxisSpec>,
}

impl TheoremInstance {
    pub fn p(&self) -> &ExponentVector {
        &self.spec.p
    }

    pub fn r(&self) -> &ExponentVector {
        &self.spec.r
    }

    fn precondition(check: &str, detail: String) -> Error {
        Error::Precondition {
            check: check.into(),
            detail,
        }
    }

    /// Preconditions of the inequality, as structured errors.
    pub fn check_preconditions(&self) -> Result<()> {
        if !validate_exponent_pair(self.p(), self.r())? {
            return Err(Self::precondition(
                "exponent condition",
                format!(
                    "r = ({}) exceeds min(1, p_1..p_k) = ({})",
                    self.r(),
                    running_min_exponent(self.p())
                ),
            ));
        }
        if let Some(v) = self.f.samples().iter().find(|v| **v < 0.0) {
            return Err(Self::precondition("f >= 0", format!("found the sample {v}")));
        }
        let echo = verify_echo(&self.f, &self.echo, ECHO_TOLERANCE)?;
        if !echo.passed {
            return Err(Self::precondition(
                "echo periodicity",
                format!("residual {:e} at {:?}", echo.worst_residual, echo.worst_at),
            ));
        }
        if !self.omega.is_constant() {
            let region = self.coordinate_box();
            let compat = check_e0_compatibility(&self.omega, &self.basis, self.echo.e0(), &region, ECHO_TOLERANCE)?;
            if !compat.holds {
                return Err(Self::precondition(
                    "weight compatibility",
                    format!("residual {:e} at {:?}", compat.worst_residual, compat.witness),
                ));
            }
        }
        if !self.v.is_constant() {
            let region = SampleRegion::Points(
                self.coordinate_box()
                    .points()
                    .into_iter()
                    .map(|c| self.basis.to_physical(&c))
                    .collect(),
            );
            let shifts = self.physical_support();
            let sub = check_submultiplicative(&self.v, &region, &shifts, SUBMULTIPLICATIVE_TOLERANCE)?;
            if !sub.holds {
                return Err(Self::precondition(
                    "submultiplicative v",
                    format!(
                        "evenness residual {:e}, moderate constant {}",
                        sub.evenness_residual, sub.moderate_constant
                    ),
                ));
            }
        }
        Ok(())
    }

    fn coordinate_box(&self) -> SampleRegion {
        let (lo, hi): (Vec<f64>, Vec<f64>) = self.roi.iter().map(|ax| (ax.origin(), ax.end())).unzip();
        SampleRegion::Box { lo, hi, points: 9 }
    }

    fn physical_support(&self) -> Vec<Vec<f64>> {
        let mut shifts: Vec<Vec<f64>> = self
            .a
            .support()
            .iter()
            .map(|m| self.a.lattice().point(m))
            .collect();
        if shifts.is_empty() {
            shifts.push(vec![0.0; self.basis.dim()]);
        }
        shifts
    }

    /// `a *_[E] f` on `I`.
    pub fn convolution(&self) -> Result<GridFunction> {
        semi_discrete_convolve(&self.a, &self.f, &self.echo, &self.roi)
    }

    /// `max w(x) / (w(x - T m) v(T m))` over cell midpoints `x` of `I` and `m`
    /// in the support of `a`, and `max v(T m) / v(T (m + 1/2))`.
    fn weight_constants(&self) -> (f64, f64) {
        if self.omega.is_constant() && self.v.is_constant() {
            return (1.0, 1.0);
        }
        let support = self.a.support();
        let shifts: Vec<Vec<f64>> = support.iter().map(|m| self.a.lattice().point(m)).collect();
        let v_at: Vec<f64> = shifts.iter().map(|y| self.v.eval(y)).collect();
        let cell = support
            .iter()
            .zip(&v_at)
            .map(|(m, vm)| vm / self.v.eval(&self.a.cell_midpoint(m)))
            .fold(1.0f64, f64::max);
        let shape: Vec<usize> = self.roi.iter().map(AxisSpec::stored_cells).collect();
        let points: Vec<Vec<f64>> = ndarray::indices(shape)
            .into_iter()
            .map(|idx| {
                use ndarray::Dimension;
                let c: Vec<f64> = idx
                    .slice()
                    .iter()
                    .zip(&self.roi)
                    .map(|(&i, ax)| ax.midpoint(i as i64))
                    .collect();
                self.basis.to_physical(&c)
            })
            .collect();
        let moderate = points
            .par_iter()
            .map(|x| {
                let wx = self.omega.eval(x);
                let mut best = 0.0f64;
                let mut back = vec![0.0; x.len()];
                for (y, vy) in shifts.iter().zip(&v_at) {
                    for ((b, xi), yi) in back.iter_mut().zip(x).zip(y) {
                        *b = xi - yi;
                    }
                    best = best.max(wx / (self.omega.eval(&back) * vy));
                }
                best
            })
            .reduce(|| 0.0, f64::max);
        (moderate.max(if shifts.is_empty() { 1.0 } else { 0.0 }), cell)
    }
}

/// The two sides of the inequality at one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sides {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, with `0/0 = 0`.
    pub ratio: f64,
}

fn sides(inst: &TheoremInstance) -> Result<Sides> {
    let conv = inst.convolution()?;
    let lhs = mixed_norm(&conv, inst.p(), &inst.omega)?;
    let a_norm = discrete_mixed_norm(&inst.a, inst.r(), &inst.v)?;
    let f_norm = mixed_norm(&inst.f.base(), inst.p(), &inst.omega)?;
    let rhs = a_norm * f_norm;
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    Ok(Sides { lhs, rhs, ratio })
}

/// The refinement cross-check attached to a record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedCheck {
    pub resolution: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `max(|lhs' - lhs| / lhs, |rhs' - rhs| / rhs)` over nonzero sides.
    pub drift: f64,
    pub pass: bool,
}

/// One checked instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRecord {
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub instance: InstanceSpec,
    pub resolution: usize,
    pub echo_class: EchoClass,
    pub lhs: f64,
    pub rhs: f64,
    pub admissible_constant: f64,
    /// Moderateness of `omega` against `v` on the exact pairs used.
    pub moderate_constant: f64,
    /// `max v(T m) / v(T (m + 1/2))` over the support of `a`.
    pub cell_constant: f64,
    pub quad_margin: f64,
    pub ratio: f64,
    pub pass: bool,
    pub refined: Option<RefinedCheck>,
    /// Set when a precondition or numerical step failed; the record then
    /// does not pass.
    pub rejection: Option<String>,
}

impl VerificationRecord {
    /// Passes at the base resolution and, if refined, at the finer one too.
    pub fn passed(&self) -> bool {
        self.pass && self.refined.as_ref().is_none_or(|r| r.pass)
    }

    fn rejected(spec: &InstanceSpec, resolution: usize, margin: f64, err: &Error) -> Self {
        let class = EchoSpec::new(spec.e0.clone(), spec.echo_vectors())
            .map(|e| e.class())
            .unwrap_or(EchoClass::Periodic);
        Self {
            trial: None,
            seed: None,
            instance: spec.clone(),
            resolution,
            echo_class: class,
            lhs: 0.0,
            rhs: 0.0,
            admissible_constant: 0.0,
            moderate_constant: 0.0,
            cell_constant: 0.0,
            quad_margin: margin,
            ratio: 0.0,
            pass: false,
            refined: None,
            rejection: Some(err.to_string()),
        }
    }
}

/// Checks one sampled instance after validating its preconditions.
pub fn verify_theorem_instance(inst: &TheoremInstance, quad_margin: f64) -> Result<VerificationRecord> {
    inst.check_preconditions()?;
    let s = sides(inst)?;
    let (moderate, cell) = inst.weight_constants();
    let admissible = moderate * cell;
    Ok(VerificationRecord {
        trial: None,
        seed: None,
        instance: inst.spec.clone(),
        resolution: inst.resolution,
        echo_class: inst.echo.class(),
        lhs: s.lhs,
        rhs: s.rhs,
        admissible_constant: admissible,
        moderate_constant: moderate,
        cell_constant: cell,
        quad_margin,
        ratio: s.ratio,
        pass: s.lhs <= admissible * s.rhs * (1.0 + quad_margin),
        refined: None,
        rejection: None,
    })
}

/// Verifies `spec` at `resolution` and cross-checks it at `2 * resolution`
/// when `refine` is set. Failures become records with a rejection message.
pub fn verify_spec(spec: &InstanceSpec, resolution: usize, quad_margin: f64, refine: bool) -> VerificationRecord {
    let run = || -> Result<VerificationRecord> {
        let mut record = verify_theorem_instance(&spec.build(resolution)?, quad_margin)?;
        if refine {
            let fine = spec.build(2 * resolution)?;
            let s = sides(&fine)?;
            let rel = |new: f64, old: f64| if old == 0.0 { new.abs() } else { (new - old).abs() / old };
            let (moderate, cell) = fine.weight_constants();
            record.refined = Some(RefinedCheck {
                resolution: 2 * resolution,
                lhs: s.lhs,
                rhs: s.rhs,
                drift: rel(s.lhs, record.lhs).max(rel(s.rhs, record.rhs)),
                pass: s.lhs <= moderate * cell * s.rhs * (1.0 + quad_margin),
            });
        }
        Ok(record)
    };
    run().unwrap_or_else(|e| VerificationRecord::rejected(spec, resolution, quad_margin, &e))
}

/// One stage `k` of the induction: `g_k <= RHS_k` pointwise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub k: usize,
    /// `p_{0,k}`, with `p_{0,0} = 1`.
    pub exponent: f64,
    pub max_ratio: f64,
    /// Index of the worst point on the stage grid.
    pub worst_index: Vec<usize>,
    pub points: usize,
    pub pass: bool,
}

/// Stage-by-stage comparison of the induction in the proof of the inequality.
#[derive(Debug, Clone, Serialize)]
pub struct InductionTrace {
    pub stages: Vec<StageReport>,
    pub margin: f64,
    pub pass: bool,
    /// `g_k` on the grid of axes `k+1..d` of `I`.
    #[serde(skip)]
    pub g: Vec<ArrayD<f64>>,
    /// Right-hand sides on the same grids.
    #[serde(skip)]
    pub rhs: Vec<ArrayD<f64>>,
}

/// Computes `g_k`, the iterated norms of `|a *_[E] f|` over the first `k`
/// axes of `I`, and the right side
/// `(sum_{m_k} f_k(z_k - phi_k(m_k))^{q} a_k(m_k)^{q})^{1/q}` with
/// `q = p_{0,k}`, `f_k` the iterated norms of `f` over its window and `a_k`
/// the iterated `l^{p_{0,1}}, ..., l^{p_{0,k}}` norms of `|a|`. The shift
/// `phi_k` moves line axes by the echo displacement of `m` and leaves
/// periodic axes alone.
pub fn induction_trace(inst: &TheoremInstance, margin: f64) -> Result<InductionTrace> {
    if !inst.basis.is_standard() {
        return Err(TheoremInstance::precondition(
            "standard basis",
            "the induction trace runs on the standard basis".into(),
        ));
    }
    if !(inst.omega.is_constant() && inst.v.is_constant()) {
        return Err(TheoremInstance::precondition(
            "unweighted",
            "the induction trace runs with w = v = 1".into(),
        ));
    }
    inst.check_preconditions()?;
    let d = inst.basis.dim();
    let p = inst.p();
    let q: Vec<f64> = std::iter::once(1.0).chain(running_min_exponent(p).entries().iter().copied()).collect();

    let conv = inst.convolution()?;
    let roi_widths: Vec<f64> = inst.roi.iter().map(AxisSpec::cell_width).collect();
    let g = iterated_norms(conv.samples().mapv(f64::abs), &roi_widths, p)?;
    let base = inst.f.base();
    let f_widths: Vec<f64> = base.axes().iter().map(AxisSpec::cell_width).collect();
    let f_stages = iterated_norms(base.samples().clone(), &f_widths, p)?;
    let a_abs: BTreeMap<Vec<i64>, f64> = inst.a.iter().map(|(k, v)| (k.clone(), v.abs())).collect();
    let a_stages = discrete_iterated_norms(&a_abs, &running_min_exponent(p));

    // first cell of I inside the window of f, per axis
    let start: Vec<i64> = inst
        .roi
        .iter()
        .zip(base.axes())
        .enumerate()
        .map(|(l, (r, w))| if r.is_periodic() { Ok(0) } else { w.offset_cells(l, r.origin() - w.origin()) })
        .collect::<Result<_>>()?;

    let mut stages = Vec::with_capacity(d + 1);
    let mut rhs_all = Vec::with_capacity(d + 1);
    for k in 0..=d {
        let qk = q[k];
        let fk = &f_stages[k];
        // shifts of axes k+1..d for each suffix m_k, in cells of the window
        let terms: Vec<(f64, Vec<i64>)> = a_stages[k]
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(suffix, v)| {
                let mut m = vec![0i64; k];
                m.extend_from_slice(suffix);
                let shift = inst.echo.line_displacement(&m);
                let cells = (k..d)
                    .map(|l| {
                        if inst.roi[l].is_periodic() {
                            Ok(0)
                        } else {
                            inst.roi[l].offset_cells(l, shift[l]).map(|c| start[l] - c)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((*v, cells))
            })
            .collect::<Result<_>>()?;
        let gk = &g[k];
        let mut rhs = ArrayD::<f64>::zeros(gk.raw_dim());
        for (idx, out) in rhs.indexed_iter_mut() {
            use ndarray::Dimension;
            let z = idx.slice();
            let mut acc = 0.0;
            for (av, off) in &terms {
                let src: Vec<usize> = z.iter().zip(off).map(|(&i, &o)| (i as i64 + o) as usize).collect();
                let fv = fk[src.as_slice()];
                acc += (fv * av).powf(qk);
            }
            *out = acc.powf(1.0 / qk);
        }
        let mut worst = (0.0f64, Vec::new());
        for (idx, gv) in gk.indexed_iter() {
            use ndarray::Dimension;
            let r = rhs[idx.slice()];
            let ratio = if *gv == 0.0 {
                0.0
            } else if r == 0.0 {
                f64::INFINITY
            } else {
                gv / r
            };
            if ratio > worst.0 || worst.1.is_empty() {
                worst = (worst.0.max(ratio), idx.slice().to_vec());
            }
        }
        stages.push(StageReport {
            k,
            exponent: qk,
            max_ratio: worst.0,
            worst_index: worst.1,
            points: gk.len(),
            pass: worst.0 <= 1.0 + margin,
        });
        rhs_all.push(rhs);
    }
    let pass = stages.iter().all(|s| s.pass);
    Ok(InductionTrace {
        stages,
        margin,
        pass,
        g,
        rhs: rhs_all,
    })
}

/// Growth of the ratio outside the exponent condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessRecord {
    pub n: usize,
    pub p: ExponentVector,
    pub r: ExponentVector,
    pub admissible: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// The family `d = 1` periodic, `f = 1`, `a = 1` on `{0, ..., N-1}`, pushed
/// through the convolution and norm code without validating `(p, r)`.
pub fn sharpness_counterexample(n: usize, p: &ExponentVector, r: &ExponentVector) -> Result<SharpnessRecord> {
    if n == 0 {
        return Err(Error::InvalidParameter("N must be positive".into()));
    }
    for e in [p, r] {
        if e.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                found: e.dim(),
            });
        }
    }
    let basis = OrderedBasis::standard(1);
    let axis = AxisSpec::periodic(16)?;
    let f = GridFunction::sample(&basis, &[axis], |_| 1.0)?;
    let a = LatticeSequence::from_entries(Lattice::new(basis), (0..n as i64).map(|j| (vec![j], 1.0)))?;
    let echo = EchoSpec::periodic(vec![true]);
    let one = Weight::constant();
    let conv = semi_discrete_convolve(&a, &f, &echo, &[axis])?;
    let lhs = mixed_norm(&conv, p, &one)?;
    let rhs = discrete_mixed_norm(&a, r, &one)? * mixed_norm(&f, p, &one)?;
    Ok(SharpnessRecord {
        n,
        p: p.clone(),
        r: r.clone(),
        admissible: validate_exponent_pair(p, r)?,
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// The canonical case `p = (inf)`, `r = (2)`, where the ratio is `sqrt(N)`.
pub fn canonical_sharpness(n: usize) -> Result<SharpnessRecord> {
    let p = ExponentVector::new(vec![f64::INFINITY])?;
    let r = ExponentVector::new(vec![2.0])?;
    sharpness_counterexample(n, &p, &r)
}

/// The worst trial of one discrete Young inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoungWorst {
    pub trial: usize,
    pub exponents: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoungReport {
    pub trials: usize,
    pub seed: u64,
    /// Largest `lhs - rhs` for `||a*b||_{p0} <= ||a||_{p1} ||b||_{p2}`.
    pub convolution_slack: f64,
    /// Largest `lhs - rhs` for `||a*b||_p <= ||a||_p ||b||_r`, `r <= min(1, p)`.
    pub small_exponent_slack: f64,
    pub violations: usize,
    pub tolerance: f64,
    pub worst_convolution: Option<YoungWorst>,
    pub worst_small_exponent: Option<YoungWorst>,
    pub pass: bool,
}

const YOUNG_TOLERANCE: f64 = 1e-9;
const P_CHOICES: [f64; 7] = [0.25, 0.5, 1.0, 1.5, 2.0, 4.0, f64::INFINITY];
const YOUNG_P: [f64; 7] = [1.0, 1.25, 1.5, 2.0, 3.0, 4.0, f64::INFINITY];

fn random_sequence(rng: &mut ChaCha8Rng, dim: usize) -> Result<LatticeSequence> {
    let len = rng.gen_range(1..=6);
    let entries: Vec<(Vec<i64>, f64)> = (0..len)
        .map(|_| ((0..dim).map(|_| rng.gen_range(-3..=3)).collect(), rng.gen_range(-1.0..1.0)))
        .collect();
    LatticeSequence::from_entries(Lattice::new(OrderedBasis::standard(dim)), entries)
}

/// Runs both discrete Young inequalities over `trials` random pairs.
pub fn young_check(trials: usize, seed: u64) -> Result<YoungReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one = Weight::constant();
    let mut report = YoungReport {
        trials,
        seed,
        convolution_slack: f64::NEG_INFINITY,
        small_exponent_slack: f64::NEG_INFINITY,
        violations: 0,
        tolerance: YOUNG_TOLERANCE,
        worst_convolution: None,
        worst_small_exponent: None,
        pass: true,
    };
    for trial in 0..trials {
        let dim = rng.gen_range(1..=2);
        let a = random_sequence(&mut rng, dim)?;
        let b = random_sequence(&mut rng, dim)?;
        let ab = discrete_convolve(&a, &b)?;
        let norm = |s: &LatticeSequence, p: f64| -> Result<f64> {
            discrete_mixed_norm(s, &ExponentVector::uniform(dim, p)?, &one)
        };

        let (p1, p2) = loop {
            let p1 = *YOUNG_P.choose(&mut rng).expect("nonempty");
            let p2 = *YOUNG_P.choose(&mut rng).expect("nonempty");
            if 1.0 / p1 + 1.0 / p2 >= 1.0 {
                break (p1, p2);
            }
        };
        let inv = 1.0 / p1 + 1.0 / p2 - 1.0;
        let p0 = if inv == 0.0 { f64::INFINITY } else { 1.0 / inv };
        let (lhs, rhs) = (norm(&ab, p0)?, norm(&a, p1)? * norm(&b, p2)?);
        if lhs - rhs > report.convolution_slack {
            report.convolution_slack = lhs - rhs;
            report.worst_convolution = Some(YoungWorst {
                trial,
                exponents: vec![p0, p1, p2],
                lhs,
                rhs,
            });
        }
        if lhs - rhs > YOUNG_TOLERANCE {
            report.violations += 1;
        }

        let p = *P_CHOICES.choose(&mut rng).expect("nonempty");
        let r = p.min(1.0) * rng.gen_range(0.2..=1.0);
        let (lhs, rhs) = (norm(&ab, p)?, norm(&a, p)? * norm(&b, r)?);
        if lhs - rhs > report.small_exponent_slack {
            report.small_exponent_slack = lhs - rhs;
            report.worst_small_exponent = Some(YoungWorst {
                trial,
                exponents: vec![p, r],
                lhs,
                rhs,
            });
        }
        if lhs - rhs > YOUNG_TOLERANCE {
            report.violations += 1;
        }
    }
    report.pass = report.violations == 0;
    Ok(report)
}

/// Options of [`random_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteOptions {
    pub seed: u64,
    pub count: usize,
    pub dims: Vec<usize>,
    pub weighted: bool,
    pub resolution: usize,
    pub margin: f64,
    /// Repeat every instance at twice the resolution.
    pub refine: bool,
    /// Draw sequences with both signs instead of `a >= 0`.
    #[serde(default)]
    pub signed: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            count: 200,
            dims: vec![1, 2, 3],
            weighted: false,
            resolution: 64,
            margin: DEFAULT_MARGIN,
            refine: true,
            signed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub count: usize,
    pub passed: usize,
    pub failed: usize,
    pub rejected: usize,
    pub max_ratio: f64,
    /// `max lhs / (C rhs)` with `C` the admissible constant.
    pub max_normalized_ratio: f64,
    pub max_drift: f64,
    pub shear_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub options: SuiteOptions,
    pub records: Vec<VerificationRecord>,
    pub summary: SuiteSummary,
}

impl SuiteReport {
    pub fn pass(&self) -> bool {
        self.summary.failed == 0 && self.summary.count > 0
    }
}

/// Draws an instance. Line Gaussians get widths that keep the tail of
/// `|f|^{p_l}` inside the window and the sampled maximum within a fraction of
/// a percent of the true one for `p_l = inf`. Shear echoes are multiples of
/// the cell width at `resolution` and appear only in unweighted draws. The
/// sequence is nonnegative unless `signed` is set.
pub fn draw_instance(rng: &mut ChaCha8Rng, options: &SuiteOptions) -> InstanceSpec {
    let SuiteOptions {
        ref dims,
        weighted,
        resolution,
        signed,
        ..
    } = *options;
    let d = *dims.choose(rng).expect("nonempty dims");
    let e0: Vec<bool> = (0..d).map(|_| rng.gen_bool(0.5)).collect();
    let p: Vec<f64> = (0..d).map(|_| *P_CHOICES.choose(rng).expect("nonempty")).collect();
    let p = ExponentVector::new(p).expect("positive exponents");
    let r: Vec<f64> = running_min_exponent(&p)
        .entries()
        .iter()
        .map(|m| if rng.gen_bool(0.4) { *m } else { m * rng.gen_range(0.3..1.0) })
        .collect();
    let r = ExponentVector::new(r).expect("positive exponents");

    let h = 2.0 * DEFAULT_HALF_WIDTH / resolution as f64;
    let mut echo = vec![vec![0.0; d]; d];
    if !weighted && rng.gen_bool(0.5) {
        // total drift |c| * stored periods per line axis stays within MAX_SHEAR_SPREAD
        let mut spread = vec![0.0; d];
        for k in 0..d {
            let lines: Vec<usize> = (0..k).filter(|&l| !e0[l]).collect();
            if e0[k] && !lines.is_empty() && rng.gen_bool(0.7) {
                let l = *lines.choose(rng).expect("nonempty");
                let c = *[-2.0, -1.0, 1.0, 2.0].choose(rng).expect("nonempty") * h;
                if spread[l] + 2.0 * c.abs() <= MAX_SHEAR_SPREAD {
                    spread[l] += 2.0 * c.abs();
                    echo[k][l] = c;
                }
            }
        }
    }
    let gaussians = (0..d)
        .map(|l| {
            let pl = p.entries()[l];
            let hi = if pl.is_infinite() { 0.7 } else { (0.6 * pl.sqrt()).min(0.7) };
            let lo = if pl.is_infinite() { 0.55 } else { 0.6 * hi };
            GaussianFactor {
                center: rng.gen_range(-0.25..=0.25),
                sigma: rng.gen_range(lo..=hi),
            }
        })
        .collect();
    let trig = (0..d)
        .map(|_| {
            let terms = (0..rng.gen_range(1..=2))
                .map(|_| TrigTerm {
                    freq: rng.gen_range(1..=3),
                    amp: rng.gen_range(0.0..0.5),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                })
                .collect();
            TrigFactor { offset: 1.5, terms }
        })
        .collect();
    let support: Vec<Vec<i64>> = {
        let available: usize = e0.iter().map(|&per| if per { 5 } else { 3 }).product();
        let size = rng.gen_range(1..=5).min(available);
        let mut picked: Vec<Vec<i64>> = Vec::new();
        while picked.len() < size {
            let m: Vec<i64> = (0..d)
                .map(|k| {
                    let reach = if e0[k] { 2 } else { 1 };
                    rng.gen_range(-reach..=reach)
                })
                .collect();
            if !picked.contains(&m) {
                picked.push(m);
            }
        }
        picked
    };
    let a = support
        .into_iter()
        .map(|m| {
            let sign = if signed && rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            (m, sign * rng.gen_range(0.2..=1.0))
        })
        .collect();
    let families = [WeightFamily::Exponential { r: 0.25 }, WeightFamily::Polynomial { s: 1.0 }];
    let (omega, v) = if weighted {
        (
            families.choose(rng).expect("nonempty").clone(),
            families.choose(rng).expect("nonempty").clone(),
        )
    } else {
        (WeightFamily::Constant, WeightFamily::Constant)
    };
    InstanceSpec {
        basis: Vec::new(),
        e0,
        echo,
        gaussians,
        trig,
        omega,
        v,
        omega_on_lines: true,
        p,
        r,
        a,
        half_width: DEFAULT_HALF_WIDTH,
    }
}

/// Draws and checks `count` instances; deterministic in `options.seed`.
/// Trials run in parallel and are reported in trial order.
pub fn random_suite(options: &SuiteOptions) -> Result<SuiteReport> {
    if options.count == 0 {
        return Err(Error::InvalidParameter("suite count must be at least 1".into()));
    }
    if options.dims.is_empty() || options.dims.contains(&0) {
        return Err(Error::InvalidParameter("suite dimensions must be positive".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(options.seed);
    let seeds: Vec<u64> = (0..options.count).map(|_| master.gen()).collect();
    let records: Vec<VerificationRecord> = seeds
        .par_iter()
        .enumerate()
        .map(|(trial, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = draw_instance(&mut rng, options);
            let mut record = verify_spec(&spec, options.resolution, options.margin, options.refine);
            record.trial = Some(trial);
            record.seed = Some(seed);
            record
        })
        .collect();
    let summary = summarize(&records);
    Ok(SuiteReport {
        options: options.clone(),
        records,
        summary,
    })
}

pub fn summarize(records: &[VerificationRecord]) -> SuiteSummary {
    let passed = records.iter().filter(|r| r.passed()).count();
    SuiteSummary {
        count: records.len(),
        passed,
        failed: records.len() - passed,
        rejected: records.iter().filter(|r| r.rejection.is_some()).count(),
        max_ratio: records.iter().map(|r| r.ratio).fold(0.0, f64::max),
        max_normalized_ratio: records
            .iter()
            .filter(|r| r.admissible_constant > 0.0)
            .map(|r| r.ratio / r.admissible_constant)
            .fold(0.0, f64::max),
        max_drift: records
            .iter()
            .filter_map(|r| r.refined.as_ref().map(|x| x.drift))
            .fold(0.0, f64::max),
        shear_instances: records.iter().filter(|r| r.echo_class == EchoClass::Shear).count(),
    }
}

/// The hand instance: `d = 1` periodic, `f = 1`, `a = delta_0 + delta_1`,
/// `p = (2)`, `r = (1)`; both sides equal 2.
pub fn hand_instance() -> InstanceSpec {
    InstanceSpec {
        basis: Vec::new(),
        e0: vec![true],
        echo: Vec::new(),
        gaussians: vec![GaussianFactor {
            center: 0.0,
            sigma: 1.0,
        }],
        trig: vec![TrigFactor::constant(1.0)],
        omega: WeightFamily::Constant,
        v: WeightFamily::Constant,
        omega_on_lines: true,
        p: ExponentVector::new(vec![2.0]).expect("valid"),
        r: ExponentVector::new(vec![1.0]).expect("valid"),
        a: vec![(vec![0], 1.0), (vec![1], 1.0)],
        half_width: DEFAULT_HALF_WIDTH,
    }
}

/// A `(line, periodic)` instance whose second basis vector echoes along the
/// first by a quarter unit.
pub fn shear_example() -> InstanceSpec {
    InstanceSpec {
        basis: Vec::new(),
        e0: vec![false, true],
        echo: vec![vec![0.0, 0.0], vec![0.25, 0.0]],
        gaussians: vec![GaussianFactor { center: 0.0, sigma: 0.6 }; 2],
        trig: vec![
            TrigFactor::constant(1.0),
            TrigFactor {
                offset: 1.5,
                terms: vec![TrigTerm {
                    freq: 1,
                    amp: 0.5,
                    phase: 0.0,
                }],
            },
        ],
        omega: WeightFamily::Constant,
        v: WeightFamily::Constant,
        omega_on_lines: true,
        p: ExponentVector::new(vec![1.0, 2.0]).expect("valid"),
        r: ExponentVector::new(vec![1.0, 1.0]).expect("valid"),
        a: vec![(vec![1, 2], 1.0), (vec![-1, 0], 1.0)],
        half_width: DEFAULT_HALF_WIDTH,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_instance_has_ratio_one() {
        let rec = verify_theorem_instance(&hand_instance().build(16).unwrap(), DEFAULT_MARGIN).unwrap();
        assert!((rec.lhs - 2.0).abs() < 1e-12);
        assert!((rec.rhs - 2.0).abs() < 1e-12);
        assert!((rec.ratio - 1.0).abs() < 1e-9);
        assert!(rec.pass);
        assert_eq!(rec.admissible_constant, 1.0);
    }

    #[test]
    fn delta_gives_ratio_one() {
        let mut spec = hand_instance();
        spec.e0 = vec![false];
        spec.gaussians[0].sigma = 0.5;
        spec.a = vec![(vec![1], -0.5)];
        let rec = verify_theorem_instance(&spec.build(64).unwrap(), DEFAULT_MARGIN).unwrap();
        assert!((rec.ratio - 1.0).abs() < 1e-9, "{rec:?}");
    }

    #[test]
    fn inadmissible_exponents_are_rejected() {
        let mut spec = hand_instance();
        spec.r = ExponentVector::new(vec![2.0]).unwrap();
        let err = verify_theorem_instance(&spec.build(8).unwrap(), DEFAULT_MARGIN).unwrap_err();
        assert!(matches!(err, Error::Precondition { ref check, .. } if check == "exponent condition"));
        let rec = verify_spec(&spec, 8, DEFAULT_MARGIN, false);
        assert!(!rec.passed() && rec.rejection.is_some());
    }

    #[test]
    fn wide_gaussian_is_rejected_for_small_p() {
        let mut spec = hand_instance();
        spec.e0 = vec![false];
        spec.p = ExponentVector::new(vec![0.25]).unwrap();
        spec.r = ExponentVector::new(vec![0.25]).unwrap();
        spec.gaussians[0].sigma = 1.0;
        assert!(matches!(spec.build(64), Err(Error::InsufficientDecay(_))));
    }

    #[test]
    fn window_holds_the_dilated_region() {
        let inst = shear_example().build(64).unwrap();
        // displacements 1 + 2 * 0.25 = 1.5 and -1
        assert_eq!(inst.f.axes()[0], AxisSpec::line(-5.5, 5.0, 84).unwrap());
        assert_eq!(inst.f.axes()[1], AxisSpec::periodic_extended(64, 2).unwrap());
        let rec = verify_theorem_instance(&inst, DEFAULT_MARGIN).unwrap();
        assert!(rec.pass && rec.ratio <= 1.0 + 1e-12, "{rec:?}");
        let trace = induction_trace(&inst, DEFAULT_MARGIN).unwrap();
        assert!(trace.pass, "{:?}", trace.stages);
        assert_eq!(trace.stages.len(), 3);
    }

    #[test]
    fn final_stage_equals_the_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let opts = SuiteOptions {
            dims: vec![2],
            resolution: 32,
            signed: true,
            ..SuiteOptions::default()
        };
        let spec = draw_instance(&mut rng, &opts);
        let inst = spec.build(32).unwrap();
        let trace = induction_trace(&inst, DEFAULT_MARGIN).unwrap();
        let s = sides(&inst).unwrap();
        let g_d = *trace.g[2].first().unwrap();
        assert!((g_d - s.lhs).abs() <= 1e-12 * s.lhs.max(1e-300));
        // the last stage uses l^{p_0}, which is at most the l^r norm
        assert!(*trace.rhs[2].first().unwrap() <= s.rhs * (1.0 + 1e-12));
    }

    #[test]
    fn sharpness_is_sqrt_n() {
        for n in [4usize, 16, 64] {
            let rec = canonical_sharpness(n).unwrap();
            assert!(!rec.admissible);
            assert!((rec.ratio - (n as f64).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn young_small_run() {
        let rep = young_check(50, 3).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn young_hand_example() {
        let l = Lattice::new(OrderedBasis::standard(1));
        let a = LatticeSequence::from_entries(l, [(vec![0], 1.0), (vec![1], 1.0)]).unwrap();
        let ab = discrete_convolve(&a, &a).unwrap();
        let one = Weight::constant();
        let ev = |p: f64| ExponentVector::uniform(1, p).unwrap();
        assert_eq!(discrete_mixed_norm(&ab, &ev(f64::INFINITY), &one).unwrap(), 2.0);
        assert_eq!(
            discrete_mixed_norm(&a, &ev(1.0), &one).unwrap() * discrete_mixed_norm(&a, &ev(f64::INFINITY), &one).unwrap(),
            2.0
        );
    }

    #[test]
    fn suite_is_deterministic() {
        let opts = SuiteOptions {
            seed: 1,
            count: 3,
            dims: vec![1, 2],
            resolution: 32,
            refine: false,
            ..SuiteOptions::default()
        };
        let a = random_suite(&opts).unwrap();
        let b = random_suite(&opts).unwrap();
        assert_eq!(a, b);
        assert!(a.pass(), "{:?}", a.summary);
    }

    #[test]
    fn weighted_instance_passes_with_certified_constant() {
        let mut spec = hand_instance();
        spec.e0 = vec![false, true];
        spec.gaussians = vec![GaussianFactor { center: 0.1, sigma: 0.6 }; 2];
        spec.trig = vec![TrigFactor::constant(1.0); 2];
        spec.p = ExponentVector::new(vec![2.0, 1.0]).unwrap();
        spec.r = ExponentVector::new(vec![1.0, 1.0]).unwrap();
        spec.a = vec![(vec![1, 2], 1.0), (vec![-1, 0], 0.5)];
        spec.omega = WeightFamily::Exponential { r: 0.25 };
        spec.v = WeightFamily::Polynomial { s: 1.0 };
        let rec = verify_theorem_instance(&spec.build(32).unwrap(), DEFAULT_MARGIN).unwrap();
        assert!((rec.admissible_constant - 1.0).abs() > 1e-6);
        assert!(rec.pass, "{rec:?}");
    }
}
