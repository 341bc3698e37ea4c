//! Midpoint-sampled functions in basis coordinates.
//!
//! Each coordinate axis is either `Periodic` (one period is the unit interval
//! `[0, 1)`, optionally sampled over several consecutive periods) or `Line`
//! (a finite window `[lo, hi]` standing in for the whole real line). Sample
//! `i` on an axis of cell width `h` starting at `lo` sits at `lo + (i + 1/2) h`.
//!
//! The domain `I` of the mixed norms is the *base window*: the first period on
//! periodic axes and the full window on line axes.

use ndarray::{ArrayD, Axis, Dimension, IxDyn, Slice};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geometry::OrderedBasis;

/// Tolerance used when deciding whether an offset is a whole number of cells.
const ALIGNMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AxisSpec {
    /// `cells` per unit period, sampled over `periods` consecutive periods
    /// starting at 0.
    Periodic { cells: usize, periods: usize },
    /// `cells` cells covering `[lo, hi]`.
    Line { lo: f64, hi: f64, cells: usize },
}

impl AxisSpec {
    pub fn periodic(cells: usize) -> Result<Self> {
        Self::periodic_extended(cells, 1)
    }

    pub fn periodic_extended(cells: usize, periods: usize) -> Result<Self> {
        if cells == 0 || periods == 0 {
            return Err(Error::InvalidAxis(format!(
                "periodic axis needs cells > 0 and periods > 0 (got {cells}, {periods})"
            )));
        }
        Ok(AxisSpec::Periodic { cells, periods })
    }

    pub fn line(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidAxis("line axis needs cells > 0".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidAxis(format!(
                "line axis needs finite lo < hi (got [{lo}, {hi}])"
            )));
        }
        Ok(AxisSpec::Line { lo, hi, cells })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AxisSpec::Periodic { cells, periods } => Self::periodic_extended(cells, periods).map(|_| ()),
            AxisSpec::Line { lo, hi, cells } => Self::line(lo, hi, cells).map(|_| ()),
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, AxisSpec::Periodic { .. })
    }

    pub fn cell_width(&self) -> f64 {
        match *self {
            AxisSpec::Periodic { cells, .. } => 1.0 / cells as f64,
            AxisSpec::Line { lo, hi, cells } => (hi - lo) / cells as f64,
        }
    }

    /// Number of stored samples along the axis.
    pub fn stored_cells(&self) -> usize {
        match *self {
            AxisSpec::Periodic { cells, periods } => cells * periods,
            AxisSpec::Line { cells, .. } => cells,
        }
    }

    /// Number of samples inside the base window `I`.
    pub fn base_cells(&self) -> usize {
        match *self {
            AxisSpec::Periodic { cells, .. } => cells,
            AxisSpec::Line { cells, .. } => cells,
        }
    }

    pub fn origin(&self) -> f64 {
        match *self {
            AxisSpec::Periodic { .. } => 0.0,
            AxisSpec::Line { lo, .. } => lo,
        }
    }

    /// Upper end of the stored extent.
    pub fn end(&self) -> f64 {
        match *self {
            AxisSpec::Periodic { periods, .. } => periods as f64,
            AxisSpec::Line { hi, .. } => hi,
        }
    }

    pub fn midpoint(&self, i: i64) -> f64 {
        match *self {
            AxisSpec::Periodic { cells, .. } => (i as f64 + 0.5) / cells as f64,
            AxisSpec::Line { lo, .. } => lo + (i as f64 + 0.5) * self.cell_width(),
        }
    }

    /// Converts a coordinate offset into a whole number of cells, or fails
    /// with an alignment error naming `axis`.
    pub fn offset_cells(&self, axis: usize, offset: f64) -> Result<i64> {
        let h = self.cell_width();
        let q = offset / h;
        let r = q.round();
        if (q - r).abs() > ALIGNMENT_TOL {
            return Err(Error::Alignment {
                axis,
                offset,
                cell_width: h,
            });
        }
        Ok(r as i64)
    }

    /// The same axis with only its base window kept.
    pub fn base(&self) -> AxisSpec {
        match *self {
            AxisSpec::Periodic { cells, .. } => AxisSpec::Periodic { cells, periods: 1 },
            line => line,
        }
    }
}

/// Scalar sample types a grid can hold.
pub trait Sample: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {
    const KIND: &'static str;
    fn magnitude(&self) -> f64;
    fn to_complex(self) -> Complex64;
    fn finite(&self) -> bool;
    fn to_text(&self) -> String;
    fn from_text(s: &str) -> Result<Self>;
}

impl Sample for f64 {
    const KIND: &'static str = "real";
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
    fn finite(&self) -> bool {
        self.is_finite()
    }
    fn to_text(&self) -> String {
        format!("{self:?}")
    }
    fn from_text(s: &str) -> Result<Self> {
        s.trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad real sample `{s}`")))
    }
}

impl Sample for Complex64 {
    const KIND: &'static str = "complex";
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn to_complex(self) -> Complex64 {
        self
    }
    fn finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn to_text(&self) -> String {
        format!("{:?} {:?}", self.re, self.im)
    }
    fn from_text(s: &str) -> Result<Self> {
        let mut it = s.split_whitespace();
        let mut next = || -> Result<f64> {
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad complex sample `{s}`")))
        };
        Ok(Complex64::new(next()?, next()?))
    }
}

/// A function sampled at cell midpoints of a product of axes, in basis
/// coordinates. The array index order is `(i_1, ..., i_d)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T = f64> {
    basis: OrderedBasis,
    axes: Vec<AxisSpec>,
    samples: ArrayD<T>,
}

fn check_axes(basis: &OrderedBasis, axes: &[AxisSpec]) -> Result<()> {
    if axes.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: axes.len(),
        });
    }
    axes.iter().try_for_each(AxisSpec::validate)
}

impl<T: Sample> GridFunction<T> {
    /// Samples `f` at every cell midpoint (coordinates).
    pub fn sample<F>(basis: &OrderedBasis, axes: &[AxisSpec], f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> T,
    {
        let mut coords = vec![0.0; axes.len()];
        Self::from_index_fn(basis, axes, |idx| {
            for (k, (c, ax)) in coords.iter_mut().zip(axes).enumerate() {
                *c = ax.midpoint(idx[k] as i64);
            }
            f(&coords)
        })
    }

    /// Builds a grid from a function of the cell index.
    pub fn from_index_fn<F>(basis: &OrderedBasis, axes: &[AxisSpec], mut f: F) -> Result<Self>
    where
        F: FnMut(&[usize]) -> T,
    {
        check_axes(basis, axes)?;
        let shape: Vec<usize> = axes.iter().map(AxisSpec::stored_cells).collect();
        let samples = ArrayD::from_shape_fn(IxDyn(&shape), |idx| f(idx.slice()));
        Self::from_samples(basis.clone(), axes.to_vec(), samples)
    }

    pub fn from_samples(basis: OrderedBasis, axes: Vec<AxisSpec>, samples: ArrayD<T>) -> Result<Self> {
        check_axes(&basis, &axes)?;
        let shape: Vec<usize> = axes.iter().map(AxisSpec::stored_cells).collect();
        if samples.shape() != shape.as_slice() {
            return Err(Error::InvalidAxis(format!(
                "sample array has shape {:?}, axes require {:?}",
                samples.shape(),
                shape
            )));
        }
        if let Some((idx, _)) = samples.indexed_iter().find(|(_, v)| !v.finite()) {
            return Err(Error::Sampling {
                index: idx.slice().to_vec(),
            });
        }
        Ok(Self {
            basis,
            axes,
            samples,
        })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn basis(&self) -> &OrderedBasis {
        &self.basis
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn samples(&self) -> &ArrayD<T> {
        &self.samples
    }

    pub fn into_samples(self) -> ArrayD<T> {
        self.samples
    }

    pub fn midpoint(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, ax)| ax.midpoint(i as i64))
            .collect()
    }

    pub fn max_magnitude(&self) -> f64 {
        self.samples.iter().map(Sample::magnitude).fold(0.0, f64::max)
    }

    pub fn map<U: Sample, F: Fn(T) -> U>(&self, f: F) -> GridFunction<U> {
        GridFunction {
            basis: self.basis.clone(),
            axes: self.axes.clone(),
            samples: self.samples.mapv(f),
        }
    }

    /// The restriction to the base window `I` (first period on periodic axes).
    pub fn base(&self) -> Self {
        let mut view = self.samples.view();
        for (k, ax) in self.axes.iter().enumerate() {
            view.slice_axis_inplace(Axis(k), Slice::from(0..ax.base_cells()));
        }
        Self {
            basis: self.basis.clone(),
            axes: self.axes.iter().map(AxisSpec::base).collect(),
            samples: view.to_owned(),
        }
    }

    /// Returns `x -> f(x - steps e_k)`.
    ///
    /// Periodic axes rotate the stored samples cyclically, so a whole number
    /// of periods is the identity when one period is stored. Line axes keep
    /// the samples and translate the window; the axis must have a whole
    /// number of cells per coordinate unit.
    pub fn shift(&self, axis: usize, steps: i64) -> Result<Self> {
        let ax = self.axis(axis)?;
        match *ax {
            AxisSpec::Periodic { cells, .. } => {
                let n = ax.stored_cells() as i64;
                let by = (steps * cells as i64).rem_euclid(n) as usize;
                let mut out = self.samples.clone();
                if by != 0 {
                    let len = n as usize;
                    for (i, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
                        let src = (i + len - by) % len;
                        lane.assign(&self.samples.index_axis(Axis(axis), src));
                    }
                }
                Ok(Self {
                    samples: out,
                    ..self.clone()
                })
            }
            AxisSpec::Line { lo, hi, cells } => {
                ax.offset_cells(axis, steps as f64)?;
                let s = steps as f64;
                let mut axes = self.axes.clone();
                axes[axis] = AxisSpec::Line {
                    lo: lo + s,
                    hi: hi + s,
                    cells,
                };
                Ok(Self {
                    axes,
                    ..self.clone()
                })
            }
        }
    }

    /// Returns `x -> f(x - offset e_k)` sampled on the line window
    /// `[lo, hi]` of the current grid, which must be cell aligned. Fails with a
    /// coverage error when `[lo - offset, hi - offset]` leaves the window.
    pub fn shift_onto(&self, axis: usize, offset: f64, lo: f64, hi: f64) -> Result<Self> {
        let ax = *self.axis(axis)?;
        let AxisSpec::Line { lo: wlo, hi: whi, .. } = ax else {
            return Err(Error::InvalidAxis(format!("axis {axis} is not a line axis")));
        };
        let by = ax.offset_cells(axis, offset)?;
        let start = ax.offset_cells(axis, lo - wlo)?;
        let end = ax.offset_cells(axis, hi - wlo)?;
        if end <= start {
            return Err(Error::InvalidAxis(format!("empty region [{lo}, {hi}]")));
        }
        let (src_start, src_end) = (start - by, end - by);
        if src_start < 0 || src_end > ax.stored_cells() as i64 {
            return Err(Error::Coverage {
                axis,
                needed_lo: lo - offset,
                needed_hi: hi - offset,
                lo: wlo,
                hi: whi,
            });
        }
        let samples = self
            .samples
            .slice_axis(Axis(axis), Slice::from(src_start as usize..src_end as usize))
            .to_owned();
        let mut axes = self.axes.clone();
        axes[axis] = AxisSpec::Line {
            lo,
            hi,
            cells: (end - start) as usize,
        };
        Ok(Self {
            basis: self.basis.clone(),
            axes,
            samples,
        })
    }

    fn axis(&self, axis: usize) -> Result<&AxisSpec> {
        self.axes.get(axis).ok_or(Error::DimensionMismatch {
            expected: self.dim(),
            found: axis + 1,
        })
    }

    /// Writes the flat text dump: a header with the dimension, basis and axis
    /// specs, then one sample per line in row-major order.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mixedconv-grid 1")?;
        writeln!(w, "dim {}", self.dim())?;
        let basis: Vec<String> = self.basis.row_major().iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "basis {}", basis.join(" "))?;
        for ax in &self.axes {
            match *ax {
                AxisSpec::Periodic { cells, periods } => writeln!(w, "axis periodic {cells} {periods}")?,
                AxisSpec::Line { lo, hi, cells } => writeln!(w, "axis line {lo:?} {hi:?} {cells}")?,
            }
        }
        writeln!(w, "kind {}", T::KIND)?;
        for v in self.samples.iter() {
            writeln!(w, "{}", v.to_text())?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of grid dump".into()))?
                .map_err(Error::from)
        };
        let bad = |what: &str| Error::Parse(format!("malformed grid dump: {what}"));
        if next()?.trim() != "mixedconv-grid 1" {
            return Err(bad("header"));
        }
        let dim: usize = next()?
            .strip_prefix("dim ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("dim"))?;
        let basis_line = next()?;
        let entries: Vec<f64> = basis_line
            .strip_prefix("basis ")
            .ok_or_else(|| bad("basis"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("basis entry")))
            .collect::<Result<_>>()?;
        let basis = OrderedBasis::from_row_major(dim, &entries)?;
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let line = next()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let ax = match parts.as_slice() {
                ["axis", "periodic", c, p] => AxisSpec::periodic_extended(
                    c.parse().map_err(|_| bad("cells"))?,
                    p.parse().map_err(|_| bad("periods"))?,
                )?,
                ["axis", "line", lo, hi, c] => AxisSpec::line(
                    lo.parse().map_err(|_| bad("lo"))?,
                    hi.parse().map_err(|_| bad("hi"))?,
                    c.parse().map_err(|_| bad("cells"))?,
                )?,
                _ => return Err(bad("axis")),
            };
            axes.push(ax);
        }
        if next()?.trim() != format!("kind {}", T::KIND) {
            return Err(bad("sample kind"));
        }
        let shape: Vec<usize> = axes.iter().map(AxisSpec::stored_cells).collect();
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            values.push(T::from_text(&next()?)?);
        }
        let samples = ArrayD::from_shape_vec(IxDyn(&shape), values).map_err(|_| bad("shape"))?;
        Self::from_samples(basis, axes, samples)
    }
}
