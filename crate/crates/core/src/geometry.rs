//! Ordered bases, their lattices and dual bases, and the fundamental cell.
//!
//! Every other module works in *basis coordinates*: a physical point
//! `x = c_1 e_1 + ... + c_d e_d` is represented by `c`. Norms and
//! convolutions are computed in those coordinates and no Jacobian factor
//! `|det T_E|` is ever applied, so the unit cube in coordinates has measure 1
//! regardless of the basis.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// An ordered basis `e_1, ..., e_d` of `R^d`, stored as the matrix `T_E`
/// whose k-th column is `e_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedBasis {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    det: f64,
}

impl OrderedBasis {
    /// Smallest admissible `|det T_E|`.
    pub const NONDEGENERACY_FLOOR: f64 = 1e-12;

    pub fn standard(dim: usize) -> Self {
        Self::from_matrix(DMatrix::identity(dim, dim)).expect("identity is nondegenerate")
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        if matrix.nrows() == 0 {
            return Err(Error::InvalidParameter("basis dimension must be positive".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "basis matrix has non-finite entries".into(),
            });
        }
        let det = matrix.determinant();
        if det.abs() <= Self::NONDEGENERACY_FLOOR {
            return Err(Error::Degenerate {
                det,
                floor: Self::NONDEGENERACY_FLOOR,
            });
        }
        let inverse = matrix.clone().try_inverse().ok_or(Error::Degenerate {
            det,
            floor: Self::NONDEGENERACY_FLOOR,
        })?;
        Ok(Self {
            matrix,
            inverse,
            det,
        })
    }

    /// Builds the basis from its vectors, `vectors[k] = e_{k+1}`.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let d = vectors.len();
        for v in vectors {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
        }
        Self::from_matrix(DMatrix::from_fn(d, d, |i, k| vectors[k][i]))
    }

    /// Builds the basis from `T_E` given row by row (the config file layout).
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn determinant(&self) -> f64 {
        self.det
    }

    /// `T_E` flattened row by row.
    pub fn row_major(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .flat_map(|i| (0..d).map(move |k| (i, k)))
            .map(|(i, k)| self.matrix[(i, k)])
            .collect()
    }

    /// The basis vector `e_{k+1}` (zero-based `k`).
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.matrix.column(k).iter().copied().collect()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        (0..self.dim()).map(|k| self.vector(k)).collect()
    }

    pub fn is_standard(&self) -> bool {
        self.matrix == DMatrix::identity(self.dim(), self.dim())
    }

    /// Maps basis coordinates to the physical point `T_E c`.
    pub fn to_physical(&self, coords: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coords.len(), self.dim());
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|k| self.matrix[(i, k)] * coords[k]).sum())
            .collect()
    }

    /// Solves `T_E c = x` for the coordinates `c`.
    pub fn to_coordinates(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let rhs = DVector::from_column_slice(x);
        let lu = self.matrix.clone().lu();
        let c = lu.solve(&rhs).ok_or(Error::Degenerate {
            det: self.det,
            floor: Self::NONDEGENERACY_FLOOR,
        })?;
        Ok(c.iter().copied().collect())
    }

    /// Coordinates via the cached inverse; cheaper than [`Self::to_coordinates`]
    /// for hot loops and accurate for well-conditioned bases.
    pub(crate) fn coordinates_fast(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..d).map(|k| self.inverse[(i, k)] * x[k]).sum())
            .collect()
    }

    /// The dual basis `E'`, whose matrix is `2 pi (T_E^{-1})^t`.
    pub fn dual(&self) -> Result<OrderedBasis> {
        Self::from_matrix(self.inverse.transpose() * (2.0 * PI))
    }
}

/// The lattice `Lambda_E` of integer combinations of an ordered basis. Points
/// are addressed by their integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    basis: OrderedBasis,
}

impl Lattice {
    pub fn new(basis: OrderedBasis) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &OrderedBasis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Physical position `T_E n` of the lattice point with coordinates `n`.
    pub fn point(&self, n: &[i64]) -> Vec<f64> {
        let c: Vec<f64> = n.iter().map(|&v| v as f64).collect();
        self.basis.to_physical(&c)
    }

    /// All `n` with `|n_k| <= radius[k]`, in lexicographic order.
    pub fn points_in_range(&self, radius: &[u32]) -> Result<Vec<Vec<i64>>> {
        if radius.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: radius.len(),
            });
        }
        Ok(box_points(radius))
    }
}

/// Lexicographic enumeration of the integer box `prod_k [-radius_k, radius_k]`.
pub(crate) fn box_points(radius: &[u32]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::with_capacity(radius.len())];
    for &r in radius {
        let r = r as i64;
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-r..=r).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// The half-open fundamental cell `{ t_1 e_1 + ... + t_d e_d : t_k in [0, 1) }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parallelepiped {
    basis: OrderedBasis,
}

impl Parallelepiped {
    pub fn new(basis: OrderedBasis) -> Self {
        Self { basis }
    }

    pub fn volume(&self) -> f64 {
        self.basis.determinant().abs()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.basis
            .coordinates_fast(x)
            .iter()
            .all(|&t| (0.0..1.0).contains(&t))
    }

    /// Axis-aligned bounding box of the cell, as `(lower, upper)` corners.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.basis.dim();
        let m = self.basis.matrix();
        let lo = (0..d)
            .map(|i| (0..d).map(|k| m[(i, k)].min(0.0)).sum())
            .collect();
        let hi = (0..d)
            .map(|i| (0..d).map(|k| m[(i, k)].max(0.0)).sum())
            .collect();
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_basis(rng: &mut ChaCha8Rng, d: usize) -> OrderedBasis {
        loop {
            let entries: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if let Ok(b) = OrderedBasis::from_row_major(d, &entries) {
                if b.determinant().abs() > 0.1 {
                    return b;
                }
            }
        }
    }

    #[test]
    fn coordinates_of_standard_and_diagonal_bases() {
        let e = OrderedBasis::standard(2);
        assert_eq!(e.to_coordinates(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);

        let b = OrderedBasis::from_vectors(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let c = b.to_coordinates(&[2.0, 3.0]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn coordinates_residual_on_random_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let b = random_basis(&mut rng, 3);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c = b.to_coordinates(&x).unwrap();
            // residual against a direct matrix product
            let m = b.matrix();
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let res: f64 = (0..3)
                .map(|i| {
                    let tc: f64 = (0..3).map(|k| m[(i, k)] * c[k]).sum();
                    (tc - x[i]).powi(2)
                })
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-10 * norm_x, "residual {res}");
        }
    }

    #[test]
    fn singular_basis_is_rejected() {
        let err = OrderedBasis::from_vectors(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
        let err = OrderedBasis::from_row_major(2, &[1e-7, 0.0, 0.0, 1e-7]).unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }));
    }

    #[test]
    fn dual_of_standard_and_diagonal() {
        let d = OrderedBasis::standard(2).dual().unwrap();
        assert_eq!(d.matrix(), &(DMatrix::identity(2, 2) * (2.0 * PI)));

        let b = OrderedBasis::from_vectors(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let d = b.dual().unwrap();
        assert!((d.matrix()[(0, 0)] - PI).abs() < 1e-15);
        assert!((d.matrix()[(1, 1)] - PI / 2.0).abs() < 1e-15);
        assert_eq!(d.matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn dual_pairing_and_double_dual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for d in 1..=4 {
            let b = random_basis(&mut rng, d);
            let dual = b.dual().unwrap();
            // e'_j . e_k = 2 pi delta_jk, i.e. T_{E'}^t T_E = 2 pi I
            let prod = dual.matrix().transpose() * b.matrix();
            let target = DMatrix::<f64>::identity(d, d) * (2.0 * PI);
            assert!((prod - target).abs().max() < 1e-10);
            let back = dual.dual().unwrap();
            assert!((back.matrix() - b.matrix()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn lattice_enumeration() {
        let l1 = Lattice::new(OrderedBasis::standard(1));
        let pts = l1.points_in_range(&[2]).unwrap();
        assert_eq!(pts, vec![vec![-2], vec![-1], vec![0], vec![1], vec![2]]);

        let l2 = Lattice::new(OrderedBasis::standard(2));
        let pts = l2.points_in_range(&[1, 0]).unwrap();
        assert_eq!(pts, vec![vec![-1, 0], vec![0, 0], vec![1, 0]]);

        let l3 = Lattice::new(OrderedBasis::standard(3));
        let pts = l3.points_in_range(&[1, 1, 1]).unwrap();
        assert_eq!(pts.len(), 27);
        let mut sorted = pts.clone();
        sorted.sort();
        assert_eq!(sorted, pts, "lexicographic order");
        for p in &pts {
            let neg: Vec<i64> = p.iter().map(|v| -v).collect();
            assert!(pts.contains(&neg));
        }
    }

    #[test]
    fn lattice_origin_and_points() {
        let b = OrderedBasis::from_vectors(&[vec![1.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let l = Lattice::new(b);
        assert_eq!(l.point(&[0, 0]), vec![0.0, 0.0]);
        assert_eq!(l.point(&[1, 1]), vec![1.0, 3.0]);
    }

    #[test]
    fn parallelepiped_volume_by_monte_carlo() {
        let b = OrderedBasis::from_vectors(&[vec![1.5, 0.3], vec![-0.4, 0.8]]).unwrap();
        let cell = Parallelepiped::new(b);
        let (lo, hi) = cell.bounding_box();
        let box_vol: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let hits = (0..n)
            .filter(|_| {
                let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.gen_range(*a..*b)).collect();
                cell.contains(&x)
            })
            .count();
        let estimate = box_vol * hits as f64 / n as f64;
        assert!((estimate - cell.volume()).abs() / cell.volume() < 0.01, "{estimate}");
    }
}
