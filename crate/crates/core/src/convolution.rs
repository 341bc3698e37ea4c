//! Semi-discrete and discrete convolutions.
//!
//! The semi-discrete convolution of a lattice sequence `a` with a sampled
//! function `f` is `(a *_[E] f)(x) = sum_m a(m) f(x - T_E m)`. In basis
//! coordinates the lattice translation by `m` moves axis `k` by exactly `m_k`.
//! On a periodic axis that is a whole number of periods; the echo identity
//! turns each such period into the translation by `m_k v_k` along the line
//! axes, so only line axes move, each by a whole number of cells.

use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rayon::prelude::*;

use crate::echo::{EchoClass, EchoSpec};
use crate::error::{Error, Result};
use crate::gridfn::{AxisSpec, GridFunction};
use crate::norms::LatticeSequence;

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Per-axis cell displacement of every nonzero term of `a`, in lexicographic
/// support order.
fn term_displacements(a: &LatticeSequence, f: &GridFunction, echo: &EchoSpec) -> Result<Vec<(f64, Vec<i64>)>> {
    a.iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(m, v)| {
            let shift = echo.line_displacement(m);
            let cells = f
                .axes()
                .iter()
                .enumerate()
                .map(|(l, ax)| if ax.is_periodic() { Ok(0) } else { ax.offset_cells(l, shift[l]) })
                .collect::<Result<Vec<_>>>()?;
            Ok((v, cells))
        })
        .collect()
}

fn check_inputs(a: &LatticeSequence, f: &GridFunction, echo: &EchoSpec) -> Result<()> {
    let d = f.dim();
    for found in [a.dim(), echo.dim()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    echo.check_axes(f.axes())?;
    if echo.class() == EchoClass::Shear && f.samples().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParameter(
            "echo shifts only preserve |f|, so f must be nonnegative when some v_k is nonzero".into(),
        ));
    }
    Ok(())
}

/// The largest output region on which every term of `a *_[E] f` reads
/// sampled values of `f`: the base period on periodic axes and the line
/// window shrunk by the extreme displacements.
pub fn covered_region(a: &LatticeSequence, f: &GridFunction, echo: &EchoSpec) -> Result<Vec<AxisSpec>> {
    check_inputs(a, f, echo)?;
    let terms = term_displacements(a, f, echo)?;
    f.axes()
        .iter()
        .enumerate()
        .map(|(l, ax)| match *ax {
            AxisSpec::Periodic { cells, .. } => AxisSpec::periodic(cells),
            AxisSpec::Line { lo, cells, .. } => {
                let h = ax.cell_width();
                let hi_shift = terms.iter().map(|(_, c)| c[l]).max().unwrap_or(0);
                let lo_shift = terms.iter().map(|(_, c)| c[l]).min().unwrap_or(0);
                let first = hi_shift.max(0);
                let last = cells as i64 + lo_shift.min(0);
                if last <= first {
                    return Err(Error::Coverage {
                        axis: l,
                        needed_lo: lo - lo_shift as f64 * h,
                        needed_hi: ax.end() + hi_shift as f64 * h,
                        lo,
                        hi: ax.end(),
                    });
                }
                AxisSpec::line(lo + first as f64 * h, lo + last as f64 * h, (last - first) as usize)
            }
        })
        .collect()
}

/// Evaluates `a *_[E] f` at the cell midpoints of `output`.
///
/// Periodic output axes must carry the same cell count as `f` with a single
/// period; line output axes must use `f`'s cell width and start on one of its
/// cell boundaries. Every term must read inside `f`'s sampled window, else a
/// coverage error is returned. Each output sample is a compensated sum over
/// the support of `a` in lexicographic order, so the result does not depend
/// on the thread count.
pub fn semi_discrete_convolve(
    a: &LatticeSequence,
    f: &GridFunction,
    echo: &EchoSpec,
    output: &[AxisSpec],
) -> Result<GridFunction> {
    check_inputs(a, f, echo)?;
    let d = f.dim();
    if output.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: output.len(),
        });
    }
    let stored = f.samples().shape().to_vec();
    // start of each output axis, in cells of f
    let mut start = vec![0i64; d];
    for (l, (out, src)) in output.iter().zip(f.axes()).enumerate() {
        out.validate()?;
        match (*out, *src) {
            (AxisSpec::Periodic { cells, periods }, AxisSpec::Periodic { cells: n, .. }) => {
                if cells != n || periods != 1 {
                    return Err(Error::InvalidAxis(format!(
                        "output axis {} must be one period of {n} cells",
                        l + 1
                    )));
                }
            }
            (AxisSpec::Line { lo, .. }, AxisSpec::Line { lo: src_lo, .. }) => {
                let (h, hs) = (out.cell_width(), src.cell_width());
                if (h - hs).abs() > 1e-12 * hs {
                    return Err(Error::InvalidAxis(format!(
                        "output axis {} has cell width {h}, input has {hs}",
                        l + 1
                    )));
                }
                start[l] = src.offset_cells(l, lo - src_lo)?;
            }
            _ => {
                return Err(Error::InvalidAxis(format!(
                    "output axis {} changes kind",
                    l + 1
                )))
            }
        }
    }

    let terms = term_displacements(a, f, echo)?;
    for (l, out) in output.iter().enumerate() {
        if out.is_periodic() {
            continue;
        }
        let n_out = out.stored_cells() as i64;
        let h = out.cell_width();
        for (_, shift) in &terms {
            let first = start[l] - shift[l];
            let last = first + n_out - 1;
            if first < 0 || last >= stored[l] as i64 {
                let src = &f.axes()[l];
                return Err(Error::Coverage {
                    axis: l,
                    needed_lo: src.origin() + first as f64 * h,
                    needed_hi: src.origin() + (last + 1) as f64 * h,
                    lo: src.origin(),
                    hi: src.end(),
                });
            }
        }
    }

    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * stored[k + 1];
    }
    let term_offsets: Vec<(f64, i64)> = terms
        .iter()
        .map(|(v, shift)| {
            let off: i64 = (0..d).map(|l| (start[l] - shift[l]) * strides[l] as i64).sum();
            (*v, off)
        })
        .collect();

    let source = f.samples().as_standard_layout();
    let source = source.as_slice().expect("standard layout");
    let out_shape: Vec<usize> = output.iter().map(AxisSpec::stored_cells).collect();
    let total: usize = out_shape.iter().product();
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut rest = flat;
            let mut base = 0i64;
            for k in (0..d).rev() {
                let i = rest % out_shape[k];
                rest /= out_shape[k];
                base += (i * strides[k]) as i64;
            }
            term_offsets
                .iter()
                .map(|(v, off)| v * source[(base + off) as usize])
                .collect::<CompensatedSum>()
                .value()
        })
        .collect();
    let samples = ArrayD::from_shape_vec(IxDyn(&out_shape), values).expect("shape matches");
    GridFunction::from_samples(f.basis().clone(), output.to_vec(), samples)
}

/// `a *_[E] f` on [`covered_region`].
pub fn convolve_covered(a: &LatticeSequence, f: &GridFunction, echo: &EchoSpec) -> Result<GridFunction> {
    let region = covered_region(a, f, echo)?;
    semi_discrete_convolve(a, f, echo, &region)
}

/// Discrete convolution `(a * b)(n) = sum_m a(m) b(n - m)` on a common lattice.
pub fn discrete_convolve(a: &LatticeSequence, b: &LatticeSequence) -> Result<LatticeSequence> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let mut acc: BTreeMap<Vec<i64>, CompensatedSum> = BTreeMap::new();
    for (m, av) in a.iter().filter(|(_, v)| *v != 0.0) {
        for (k, bv) in b.iter().filter(|(_, v)| *v != 0.0) {
            let n: Vec<i64> = m.iter().zip(k).map(|(x, y)| x + y).collect();
            acc.entry(n).or_default().add(av * bv);
        }
    }
    LatticeSequence::from_entries(a.lattice().clone(), acc.into_iter().map(|(k, s)| (k, s.value())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Lattice, OrderedBasis};
    use crate::norms::{discrete_mixed_norm, ExponentVector};
    use crate::weights::Weight;
    use proptest::prelude::*;

    fn seq(dim: usize, entries: &[(&[i64], f64)]) -> LatticeSequence {
        LatticeSequence::from_entries(
            Lattice::new(OrderedBasis::standard(dim)),
            entries.iter().map(|(k, v)| (k.to_vec(), *v)),
        )
        .unwrap()
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s: CompensatedSum = [1e16, 1.0, -1e16, 1.0].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn periodic_delta_is_identity() {
        let b = OrderedBasis::standard(1);
        let ax = AxisSpec::periodic(16).unwrap();
        let f = GridFunction::sample(&b, &[ax], |x| 2.0 + (2.0 * std::f64::consts::PI * x[0]).sin()).unwrap();
        let echo = EchoSpec::periodic(vec![true]);
        for m in [0, 3, -7] {
            let g = semi_discrete_convolve(&seq(1, &[(&[m], 1.0)]), &f, &echo, &[ax]).unwrap();
            assert_eq!(g.samples(), f.samples());
        }
    }

    #[test]
    fn line_shift_matches_translation() {
        let b = OrderedBasis::standard(1);
        let ax = AxisSpec::line(-4.0, 4.0, 64).unwrap();
        let f = GridFunction::sample(&b, &[ax], |x| (-x[0] * x[0]).exp()).unwrap();
        let roi = AxisSpec::line(-2.0, 2.0, 32).unwrap();
        let g = semi_discrete_convolve(&seq(1, &[(&[1], 1.0)]), &f, &EchoSpec::none(1), &[roi]).unwrap();
        for (i, v) in g.samples().iter().enumerate() {
            let x = roi.midpoint(i as i64) - 1.0;
            assert!((v - (-x * x).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn coverage_and_alignment_errors() {
        let b = OrderedBasis::standard(1);
        let ax = AxisSpec::line(-1.0, 1.0, 8).unwrap();
        let f = GridFunction::sample(&b, &[ax], |_| 1.0).unwrap();
        let err = semi_discrete_convolve(&seq(1, &[(&[2], 1.0)]), &f, &EchoSpec::none(1), &[ax]).unwrap_err();
        assert!(matches!(err, Error::Coverage { axis: 0, .. }));
        let odd = AxisSpec::line(-1.0, 1.0, 3).unwrap();
        let g = GridFunction::sample(&b, &[odd], |_| 1.0).unwrap();
        let err = semi_discrete_convolve(&seq(1, &[(&[1], 1.0)]), &g, &EchoSpec::none(1), &[odd]).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
    }

    #[test]
    fn covered_region_shrinks_by_extreme_shifts() {
        let b = OrderedBasis::standard(1);
        let ax = AxisSpec::line(-4.0, 4.0, 64).unwrap();
        let f = GridFunction::sample(&b, &[ax], |_| 1.0).unwrap();
        let a = seq(1, &[(&[-1], 1.0), (&[2], 1.0)]);
        let r = covered_region(&a, &f, &EchoSpec::none(1)).unwrap();
        assert_eq!(r, vec![AxisSpec::line(-2.0, 3.0, 40).unwrap()]);
        let g = semi_discrete_convolve(&a, &f, &EchoSpec::none(1), &r).unwrap();
        assert!(g.samples().iter().all(|v| *v == 2.0));
    }

    /// Shear echo in d = 2 against direct evaluation of `sum_m a(m) f(x - m)`
    /// through the closed form of `f`, at 25 grid points.
    #[test]
    fn shear_echo_matches_closed_form() {
        let b = OrderedBasis::standard(2);
        let c = 0.5;
        let g = |u: f64| (-u * u).exp();
        let h = |y: f64| 2.0 + (2.0 * std::f64::consts::PI * y).cos();
        let closed = |x: f64, y: f64| g(x + c * y) * h(y);
        let axes = [AxisSpec::line(-8.0, 8.0, 128).unwrap(), AxisSpec::periodic(16).unwrap()];
        let f = GridFunction::sample(&b, &axes, |x| closed(x[0], x[1])).unwrap();
        let echo = EchoSpec::new(vec![false, true], vec![vec![0.0, 0.0], vec![c, 0.0]]).unwrap();
        let a = seq(2, &[(&[0, 0], 1.0), (&[1, -1], 0.5), (&[-1, 2], 0.25), (&[0, 1], -0.75)]);
        let roi = [AxisSpec::line(-2.0, 2.0, 32).unwrap(), axes[1]];
        let out = semi_discrete_convolve(&a, &f, &echo, &roi).unwrap();
        for i in (0..32).step_by(7) {
            for j in (0..16).step_by(4) {
                let (x, y) = (roi[0].midpoint(i), roi[1].midpoint(j));
                let direct: f64 = a
                    .iter()
                    .map(|(m, v)| v * closed(x - m[0] as f64, y - m[1] as f64))
                    .sum();
                let got = out.samples()[[i as usize, j as usize].as_slice()];
                assert!((got - direct).abs() < 1e-12, "({x}, {y}): {got} vs {direct}");
            }
        }
    }

    #[test]
    fn sheared_negative_input_is_rejected() {
        let b = OrderedBasis::standard(2);
        let axes = [AxisSpec::line(-2.0, 2.0, 16).unwrap(), AxisSpec::periodic(4).unwrap()];
        let f = GridFunction::sample(&b, &axes, |_| -1.0).unwrap();
        let echo = EchoSpec::new(vec![false, true], vec![vec![0.0; 2], vec![0.25, 0.0]]).unwrap();
        let err = convolve_covered(&seq(2, &[(&[0, 0], 1.0)]), &f, &echo).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter(_)));
    }

    #[test]
    fn discrete_convolution_example() {
        let a = seq(1, &[(&[0], 1.0), (&[1], 2.0)]);
        let b = seq(1, &[(&[0], 3.0), (&[2], -1.0)]);
        let c = discrete_convolve(&a, &b).unwrap();
        assert_eq!(c.get(&[0]), 3.0);
        assert_eq!(c.get(&[1]), 6.0);
        assert_eq!(c.get(&[2]), -1.0);
        assert_eq!(c.get(&[3]), -2.0);
    }

    fn small_seq(dim: usize) -> impl Strategy<Value = LatticeSequence> {
        prop::collection::vec((prop::collection::vec(-3i64..=3, dim), -2.0f64..2.0), 1..6).prop_map(move |e| {
            LatticeSequence::from_entries(Lattice::new(OrderedBasis::standard(dim)), e).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linearity(a in small_seq(2), b in small_seq(2), s in -3.0f64..3.0) {
            let basis = OrderedBasis::standard(2);
            let axes = [AxisSpec::line(-6.0, 6.0, 48).unwrap(), AxisSpec::periodic(8).unwrap()];
            let f = GridFunction::sample(&basis, &axes, |x| (-x[0] * x[0]).exp() * (1.5 + x[1])).unwrap();
            let echo = EchoSpec::periodic(vec![false, true]);
            let roi = [AxisSpec::line(-2.0, 2.0, 16).unwrap(), axes[1]];
            let mut combo = a.scaled(s);
            for (k, v) in b.iter() {
                combo.add(k.clone(), v).unwrap();
            }
            let lhs = semi_discrete_convolve(&combo, &f, &echo, &roi).unwrap();
            let fa = semi_discrete_convolve(&a, &f, &echo, &roi).unwrap();
            let fb = semi_discrete_convolve(&b, &f, &echo, &roi).unwrap();
            for ((l, x), y) in lhs.samples().iter().zip(fa.samples()).zip(fb.samples()) {
                prop_assert!((l - (s * x + y)).abs() < 1e-12);
            }
        }

        #[test]
        fn translation_covariance(a in small_seq(1), shift in -4i64..=4) {
            let basis = OrderedBasis::standard(1);
            let ax = AxisSpec::line(-12.0, 12.0, 96).unwrap();
            let f = GridFunction::sample(&basis, &[ax], |x| (-(x[0] - 0.3).powi(2)).exp()).unwrap();
            let roi = [AxisSpec::line(-2.0, 2.0, 16).unwrap()];
            let echo = EchoSpec::none(1);
            // a shifted by `shift` convolved with f equals the convolution translated by `shift`
            let moved = LatticeSequence::from_entries(
                a.lattice().clone(),
                a.iter().map(|(k, v)| (vec![k[0] + shift], v)),
            ).unwrap();
            let lhs = semi_discrete_convolve(&moved, &f, &echo, &roi).unwrap();
            let roi_back = [AxisSpec::line(-2.0 - shift as f64, 2.0 - shift as f64, 16).unwrap()];
            let rhs = semi_discrete_convolve(&a, &f, &echo, &roi_back).unwrap();
            for (l, r) in lhs.samples().iter().zip(rhs.samples()) {
                prop_assert!((l - r).abs() < 1e-14);
            }
        }

        #[test]
        fn young_for_sequences(a in small_seq(2), b in small_seq(2), p1 in 1.0f64..4.0, p2 in 1.0f64..4.0) {
            let inv = 1.0 / p1 + 1.0 / p2 - 1.0;
            prop_assume!(inv > 0.0);
            let p0 = 1.0 / inv;
            let w = Weight::constant();
            let ev = |p: f64| ExponentVector::uniform(2, p).unwrap();
            let lhs = discrete_mixed_norm(&discrete_convolve(&a, &b).unwrap(), &ev(p0), &w).unwrap();
            let rhs = discrete_mixed_norm(&a, &ev(p1), &w).unwrap() * discrete_mixed_norm(&b, &ev(p2), &w).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn young_for_small_exponents(a in small_seq(2), b in small_seq(2), r in 0.1f64..1.0) {
            let w = Weight::constant();
            let ev = ExponentVector::uniform(2, r).unwrap();
            let lhs = discrete_mixed_norm(&discrete_convolve(&a, &b).unwrap(), &ev, &w).unwrap();
            let rhs = discrete_mixed_norm(&a, &ev, &w).unwrap() * discrete_mixed_norm(&b, &ev, &w).unwrap();
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12);
        }
    }
}
