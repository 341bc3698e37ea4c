//! Mixed quasi-norms of Lebesgue type for grid functions and lattice
//! sequences.
//!
//! The norm is iterated in basis order: axis 1 is integrated first (the
//! innermost norm) and axis `d` last. On a line axis of cell width `h` a finite
//! exponent `p` gives `(h * sum g^p)^(1/p)`; `p = inf` is the maximum over the
//! samples. Periodic axes integrate over one period.

use ndarray::{ArrayD, Axis, Dimension};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::Lattice;
use crate::gridfn::{GridFunction, Sample};
use crate::weights::Weight;

/// Exponents `p_1, ..., p_d` in `(0, inf]`; infinity is `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentVector(Vec<f64>);

impl ExponentVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParameter("empty exponent vector".into()));
        }
        if let Some(bad) = entries.iter().find(|p| p.is_nan() || **p <= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "exponents must lie in (0, inf], got {bad}"
            )));
        }
        Ok(Self(entries))
    }

    pub fn uniform(dim: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[f64] {
        &self.0
    }
}

impl fmt::Display for ExponentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|p| if p.is_infinite() { "inf".to_string() } else { format!("{p}") })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for ExponentVector {
    type Err = Error;

    /// Parses a comma list such as `2,inf,0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .map(|t| match t.trim() {
                "inf" | "Inf" | "infinity" | "∞" => Ok(f64::INFINITY),
                v => v
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad exponent `{v}` in `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }
}

impl Serialize for ExponentVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ExponentVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// True iff `r_k <= min(1, p_1, ..., p_k)` for every `k`.
pub fn validate_exponent_pair(p: &ExponentVector, r: &ExponentVector) -> Result<bool> {
    if p.dim() != r.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: r.dim(),
        });
    }
    let bound = running_min_exponent(p);
    Ok(r.0.iter().zip(&bound.0).all(|(rk, mk)| rk <= mk))
}

/// `p_{0,k} = min(1, p_1, ..., p_k)`.
pub fn running_min_exponent(p: &ExponentVector) -> ExponentVector {
    let mut acc = 1.0f64;
    ExponentVector(
        p.0.iter()
            .map(|&pk| {
                acc = acc.min(pk);
                acc
            })
            .collect(),
    )
}

/// One-dimensional quadrature `(h * sum v^p)^(1/p)`, or `max v` for `p = inf`.
/// Exponents other than 1 are evaluated as `M (h * sum (v/M)^p)^(1/p)` with
/// `M = max v`, which stays finite for very large `p`.
pub(crate) fn lp_quadrature<'a, I>(values: I, p: f64, h: f64) -> f64
where
    I: IntoIterator<Item = &'a f64>,
    I::IntoIter: Clone,
{
    let values = values.into_iter();
    let top = values.clone().fold(0.0, |m: f64, &v| m.max(v));
    if p.is_infinite() {
        return top;
    }
    if p == 1.0 {
        return (h * values.sum::<f64>()).max(0.0);
    }
    if top == 0.0 {
        return 0.0;
    }
    let sum: f64 = values.map(|v| (v / top).powf(p)).sum();
    top * (h * sum).max(0.0).powf(1.0 / p)
}

/// The stages `g_0, g_1, ..., g_d` of the iterated norm of a nonnegative
/// array: `g_k` has the first `k` axes integrated out.
pub fn iterated_norms(g0: ArrayD<f64>, cell_widths: &[f64], p: &ExponentVector) -> Result<Vec<ArrayD<f64>>> {
    if g0.ndim() != p.dim() || cell_widths.len() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: g0.ndim(),
            found: p.dim(),
        });
    }
    debug_assert!(g0.iter().all(|v| *v >= 0.0));
    let mut stages = Vec::with_capacity(p.dim() + 1);
    stages.push(g0);
    for (k, (&pk, &h)) in p.0.iter().zip(cell_widths).enumerate() {
        let prev = stages.last().unwrap();
        let next = prev.map_axis(Axis(0), |lane| lp_quadrature(lane.iter(), pk, h));
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: format!("mixed norm, axis {}", k + 1),
            });
        }
        stages.push(next);
    }
    Ok(stages)
}

/// `|f| * w` at the midpoints of the base window.
pub fn weighted_magnitude<T: Sample>(f: &GridFunction<T>, weight: &Weight) -> ArrayD<f64> {
    let base = f.base();
    if weight.is_constant() {
        return base.samples().mapv(|v| v.magnitude());
    }
    let basis = base.basis();
    let mut out = base.samples().mapv(|v| v.magnitude());
    for (idx, v) in out.indexed_iter_mut() {
        let x = basis.to_physical(&base.midpoint(idx.slice()));
        *v *= weight.eval(&x);
    }
    out
}

/// The mixed quasi-norm of `f` over its base window `I`, weighted by `weight`.
pub fn mixed_norm<T: Sample>(f: &GridFunction<T>, p: &ExponentVector, weight: &Weight) -> Result<f64> {
    if p.dim() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            found: p.dim(),
        });
    }
    let g0 = weighted_magnitude(f, weight);
    let widths: Vec<f64> = f.axes().iter().map(|a| a.cell_width()).collect();
    let stages = iterated_norms(g0, &widths, p)?;
    Ok(*stages.last().unwrap().first().expect("scalar"))
}

/// A finitely supported real sequence on a lattice, keyed by integer
/// coordinates in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSequence {
    lattice: Lattice,
    values: BTreeMap<Vec<i64>, f64>,
}

impl LatticeSequence {
    pub fn zero(lattice: Lattice) -> Self {
        Self {
            lattice,
            values: BTreeMap::new(),
        }
    }

    pub fn delta(lattice: Lattice, at: &[i64]) -> Result<Self> {
        Self::from_entries(lattice, [(at.to_vec(), 1.0)])
    }

    /// Builds a sequence from `(index, value)` pairs; repeated indices add up.
    pub fn from_entries<I>(lattice: Lattice, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<i64>, f64)>,
    {
        let mut s = Self::zero(lattice);
        for (idx, v) in entries {
            s.add(idx, v)?;
        }
        Ok(s)
    }

    pub fn add(&mut self, idx: Vec<i64>, value: f64) -> Result<()> {
        if idx.len() != self.lattice.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.lattice.dim(),
                found: idx.len(),
            });
        }
        if !value.is_finite() {
            return Err(Error::Numeric {
                context: format!("sequence value at {idx:?}"),
            });
        }
        *self.values.entry(idx).or_insert(0.0) += value;
        Ok(())
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn get(&self, idx: &[i64]) -> f64 {
        self.values.get(idx).copied().unwrap_or(0.0)
    }

    /// Entries in lexicographic index order, including stored zeros.
    pub fn iter(&self) -> impl Iterator<Item = (&Vec<i64>, f64)> {
        self.values.iter().map(|(k, v)| (k, *v))
    }

    /// Indices with a nonzero value, lexicographic.
    pub fn support(&self) -> Vec<Vec<i64>> {
        self.values
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, _)| k.clone())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.values.values().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lattice: self.lattice.clone(),
            values: self.values.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        Self {
            lattice: self.lattice.clone(),
            values: self.values.iter().map(|(k, v)| (k.clone(), v.abs())).collect(),
        }
    }

    /// Physical position of the midpoint of the cell `j + kappa(E)`.
    pub fn cell_midpoint(&self, idx: &[i64]) -> Vec<f64> {
        let c: Vec<f64> = idx.iter().map(|&v| v as f64 + 0.5).collect();
        self.lattice.basis().to_physical(&c)
    }
}

/// The stages `a_0, ..., a_d` of the iterated sequence norm of the nonnegative
/// values `a_0`; stage `k` is keyed by the index suffix `(m_{k+1}, ..., m_d)`.
pub fn discrete_iterated_norms(
    a0: &BTreeMap<Vec<i64>, f64>,
    p: &ExponentVector,
) -> Vec<BTreeMap<Vec<i64>, f64>> {
    let mut stages = vec![a0.clone()];
    for &pk in p.entries() {
        let prev = stages.last().unwrap();
        let mut top: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (idx, &v) in prev {
            let slot = top.entry(idx[1..].to_vec()).or_insert(0.0);
            *slot = slot.max(v);
        }
        if pk.is_infinite() {
            stages.push(top);
            continue;
        }
        let mut acc: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
        for (idx, &v) in prev {
            let key = &idx[1..];
            let m = top[key];
            let term = if pk == 1.0 {
                v
            } else if m > 0.0 {
                (v / m).powf(pk)
            } else {
                0.0
            };
            *acc.entry(key.to_vec()).or_insert(0.0) += term;
        }
        if pk != 1.0 {
            for (key, v) in acc.iter_mut() {
                *v = top[key] * v.powf(1.0 / pk);
            }
        }
        stages.push(acc);
    }
    stages
}

/// Mixed norm of the cell-constant extension `sum_j a(j) chi_{j + kappa(E)}`
/// with the weight frozen at each cell midpoint `T_E (j + 1/2)`.
pub fn discrete_mixed_norm(a: &LatticeSequence, p: &ExponentVector, weight: &Weight) -> Result<f64> {
    if p.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: p.dim(),
        });
    }
    let a0: BTreeMap<Vec<i64>, f64> = a
        .iter()
        .map(|(k, v)| {
            let w = if weight.is_constant() {
                1.0
            } else {
                weight.eval(&a.cell_midpoint(k))
            };
            (k.clone(), v.abs() * w)
        })
        .collect();
    let stages = discrete_iterated_norms(&a0, p);
    let value = stages.last().unwrap().get(&Vec::new()).copied().unwrap_or(0.0);
    if !value.is_finite() {
        return Err(Error::Numeric {
            context: "discrete mixed norm".into(),
        });
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrderedBasis;
    use crate::gridfn::AxisSpec;
    use proptest::prelude::*;

    fn ev(s: &str) -> ExponentVector {
        s.parse().unwrap()
    }

    fn lattice(d: usize) -> Lattice {
        Lattice::new(OrderedBasis::standard(d))
    }

    #[test]
    fn parse_and_display() {
        let p = ev("2, inf,0.5");
        assert_eq!(p.entries(), &[2.0, f64::INFINITY, 0.5]);
        assert_eq!(p.to_string(), "2,inf,0.5");
        assert!("0,1".parse::<ExponentVector>().is_err());
        assert!("-1".parse::<ExponentVector>().is_err());
        assert!("a".parse::<ExponentVector>().is_err());
    }

    #[test]
    fn exponent_pair_condition() {
        assert!(validate_exponent_pair(&ev("2,0.5"), &ev("1,0.5")).unwrap());
        assert!(!validate_exponent_pair(&ev("2,0.5"), &ev("1,0.7")).unwrap());
        assert!(validate_exponent_pair(&ev("inf,inf,inf"), &ev("1,1,1")).unwrap());
        assert!(validate_exponent_pair(&ev("1"), &ev("1,1")).is_err());
    }

    #[test]
    fn running_minimum() {
        assert_eq!(running_min_exponent(&ev("2,0.5,3")).entries(), &[1.0, 0.5, 0.5]);
        assert_eq!(running_min_exponent(&ev("0.25")).entries(), &[0.25]);
        assert_eq!(running_min_exponent(&ev("inf,0.9,0.8")).entries(), &[1.0, 0.9, 0.8]);
    }

    #[test]
    fn constant_on_unit_cube() {
        let b = OrderedBasis::standard(3);
        let axes = [
            AxisSpec::periodic(8).unwrap(),
            AxisSpec::line(0.0, 1.0, 5).unwrap(),
            AxisSpec::periodic(3).unwrap(),
        ];
        let f = GridFunction::sample(&b, &axes, |_| 1.0).unwrap();
        for p in ["1,1,1", "0.25,2,inf", "inf,inf,inf", "3,0.5,1.5"] {
            let v = mixed_norm(&f, &ev(p), &Weight::constant()).unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{p}: {v}");
        }
    }

    #[test]
    fn analytic_iterated_norms() {
        let b1 = OrderedBasis::standard(1);
        let f = GridFunction::sample(&b1, &[AxisSpec::line(0.0, 1.0, 64).unwrap()], |x| x[0]).unwrap();
        let v = mixed_norm(&f, &ev("2"), &Weight::constant()).unwrap();
        assert!((v - 1.0 / 3f64.sqrt()).abs() / (1.0 / 3f64.sqrt()) < 0.005);

        let b2 = OrderedBasis::standard(2);
        let ax = AxisSpec::line(0.0, 1.0, 64).unwrap();
        let f = GridFunction::sample(&b2, &[ax, ax], |x| x[0] * x[1]).unwrap();
        let v = mixed_norm(&f, &ev("1,inf"), &Weight::constant()).unwrap();
        assert!((v - 0.5).abs() / 0.5 < 0.01, "{v}");
    }

    #[test]
    fn sup_norm_is_max_sample() {
        let b = OrderedBasis::standard(2);
        let ax = AxisSpec::line(-1.0, 2.0, 12).unwrap();
        let f = GridFunction::sample(&b, &[ax, AxisSpec::periodic(7).unwrap()], |x| (x[0] * 3.0 + x[1]).sin()).unwrap();
        let v = mixed_norm(&f, &ev("inf,inf"), &Weight::constant()).unwrap();
        assert_eq!(v, f.max_magnitude());
    }

    #[test]
    fn weighted_norm_uses_physical_midpoints() {
        let b = OrderedBasis::from_row_major(1, &[2.0]).unwrap();
        let f = GridFunction::sample(&b, &[AxisSpec::line(0.0, 1.0, 1).unwrap()], |_| 1.0).unwrap();
        let w = crate::weights::make_weight(crate::weights::WeightFamily::Polynomial { s: 1.0 }).unwrap();
        // midpoint coordinate 0.5 sits at physical 1.0, so the weight is 2
        assert_eq!(mixed_norm(&f, &ev("1"), &w).unwrap(), 2.0);
    }

    #[test]
    fn gaussian_quadrature_converges() {
        let b = OrderedBasis::standard(2);
        let gauss = |x: &[f64]| (-(x[0] * x[0] + 0.5 * x[1] * x[1])).exp();
        for p in ["2,1", "0.5,inf", "inf,0.25"] {
            let norm_at = |n: usize| {
                let ax = AxisSpec::line(-6.0, 6.0, n).unwrap();
                let f = GridFunction::sample(&b, &[ax, ax], gauss).unwrap();
                mixed_norm(&f, &ev(p), &Weight::constant()).unwrap()
            };
            for n in [64usize, 128] {
                let (a, c) = (norm_at(n), norm_at(2 * n));
                assert!((a - c).abs() / c < 0.01, "{p} n={n}: {a} vs {c}");
            }
        }
    }

    #[test]
    fn huge_finite_exponents_stay_finite() {
        let a = LatticeSequence::from_entries(lattice(1), [(vec![0], -1.47), (vec![2], 0.5)]).unwrap();
        let v = discrete_mixed_norm(&a, &ev("1e5"), &Weight::constant()).unwrap();
        assert!((v - 1.47).abs() < 1e-4, "{v}");
        let g = ArrayD::from_shape_vec(ndarray::IxDyn(&[3]), vec![2.0, 3.0, 1.0]).unwrap();
        let top = *iterated_norms(g, &[0.5], &ev("2000")).unwrap()[1].first().unwrap();
        assert!((top - 3.0).abs() < 3.0 * 1e-3, "{top}");
    }

    #[test]
    fn discrete_examples() {
        let l1 = lattice(1);
        let delta = LatticeSequence::delta(l1.clone(), &[0]).unwrap();
        for p in ["1", "0.3", "inf"] {
            assert_eq!(discrete_mixed_norm(&delta, &ev(p), &Weight::constant()).unwrap(), 1.0);
        }
        let ones = LatticeSequence::from_entries(l1, (0..5).map(|i| (vec![i], 1.0))).unwrap();
        for r in [0.5, 1.0, 2.0, 3.0] {
            let v = discrete_mixed_norm(&ones, &ExponentVector::new(vec![r]).unwrap(), &Weight::constant()).unwrap();
            assert!((v - 5f64.powf(1.0 / r)).abs() < 1e-12);
        }
        let two = LatticeSequence::from_entries(lattice(2), [(vec![0, 0], 1.0), (vec![1, 0], 1.0)]).unwrap();
        assert_eq!(discrete_mixed_norm(&two, &ev("1,inf"), &Weight::constant()).unwrap(), 2.0);
        assert_eq!(discrete_mixed_norm(&two, &ev("inf,1"), &Weight::constant()).unwrap(), 1.0);
    }

    fn arb_grid() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..4).prop_flat_map(|d| {
            (
                prop::collection::vec(-3.0..3.0f64, 4usize.pow(d as u32)),
                prop::collection::vec(prop::sample::select(vec![0.25, 0.5, 1.0, 1.5, 2.0, 4.0, f64::INFINITY]), d),
            )
        })
    }

    fn grid_from(values: &[f64], d: usize) -> GridFunction {
        let b = OrderedBasis::standard(d);
        let axes: Vec<AxisSpec> = (0..d)
            .map(|k| if k % 2 == 0 { AxisSpec::line(-1.0, 1.0, 4).unwrap() } else { AxisSpec::periodic(4).unwrap() })
            .collect();
        let mut it = values.iter();
        GridFunction::from_index_fn(&b, &axes, |_| *it.next().unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn homogeneity((values, p) in arb_grid(), lambda in -4.0..4.0f64) {
            let d = p.len();
            let p = ExponentVector::new(p).unwrap();
            let f = grid_from(&values, d);
            let scaled = f.map(|v| v * lambda);
            let a = mixed_norm(&scaled, &p, &Weight::constant()).unwrap();
            let b = lambda.abs() * mixed_norm(&f, &p, &Weight::constant()).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }

        #[test]
        fn collapse_to_plain_lp((values, p) in arb_grid()) {
            let d = p.len();
            let q = p[0];
            let pv = ExponentVector::uniform(d, q).unwrap();
            let f = grid_from(&values, d);
            let mixed = mixed_norm(&f, &pv, &Weight::constant()).unwrap();
            let volume: f64 = f.axes().iter().map(|a| a.cell_width()).product();
            let plain = if q.is_infinite() {
                f.max_magnitude()
            } else {
                (volume * values.iter().map(|v| v.abs().powf(q)).sum::<f64>()).powf(1.0 / q)
            };
            prop_assert!((mixed - plain).abs() <= 1e-12 * plain.max(1e-300), "{} vs {}", mixed, plain);
        }

        #[test]
        fn sequence_embedding(
            entries in prop::collection::vec(((-3i64..3), (-3i64..3), -2.0..2.0f64), 1..12),
            p in prop::collection::vec(prop::sample::select(vec![0.25, 0.5, 1.0, 2.0, 4.0, f64::INFINITY]), 2),
            shrink in prop::collection::vec(0.05..1.0f64, 2),
        ) {
            let a = LatticeSequence::from_entries(lattice(2), entries.into_iter().map(|(i, j, v)| (vec![i, j], v))).unwrap();
            let r: Vec<f64> = p.iter().zip(&shrink).map(|(pk, s)| if pk.is_infinite() { 4.0 * s } else { pk * s }).collect();
            let big = discrete_mixed_norm(&a, &ExponentVector::new(r).unwrap(), &Weight::constant()).unwrap();
            let small = discrete_mixed_norm(&a, &ExponentVector::new(p).unwrap(), &Weight::constant()).unwrap();
            prop_assert!(small <= big * (1.0 + 1e-12));
        }

        #[test]
        fn r_subadditivity(b in prop::collection::vec(-5.0..5.0f64, 1..20), r in 0.01..=1.0f64) {
            let lhs = b.iter().map(|v| v.abs()).sum::<f64>().powf(r);
            let rhs: f64 = b.iter().map(|v| v.abs().powf(r)).sum();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
