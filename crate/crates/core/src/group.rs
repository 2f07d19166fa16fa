//! Cyclic rotation groups `C_n` and their real representations.
//!
//! Permutation convention: the generator of `C_n` acts on a regular feature
//! vector by moving the last coordinate to the front,
//! `(x_0, .., x_{n-1}) -> (x_{n-1}, x_0, .., x_{n-2})`, so that element `i`
//! maps `x` to `y_j = x_{(j - i) mod n}`. Quotient representations use the
//! same direction on `n / k` coordinates.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation by `2π·index/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GroupElement {
    n: usize,
    index: usize,
}

impl GroupElement {
    /// Element `i mod n` of `C_n`; `i` may be negative.
    pub fn new(n: usize, i: i64) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroOrder);
        }
        let index = i.rem_euclid(n as i64) as usize;
        Ok(Self { n, index })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(n, 0)
    }

    /// Nearest element to the angle `theta` (radians). Exact half-bins round toward zero.
    pub fn from_angle(n: usize, theta: f64) -> Result<Self> {
        Self::new(n, quantize_angle(theta, n))
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }

    pub fn angle(&self) -> f64 {
        2.0 * PI * self.index as f64 / self.n as f64
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::OrderMismatch(self.n, other.n));
        }
        Ok(Self {
            n: self.n,
            index: (self.index + other.index) % self.n,
        })
    }

    pub fn inverse(&self) -> Self {
        Self {
            n: self.n,
            index: (self.n - self.index) % self.n,
        }
    }

    /// `self` composed with itself `k` times (`k` may be negative).
    pub fn pow(&self, k: i64) -> Self {
        let i = (self.index as i64 * k).rem_euclid(self.n as i64) as usize;
        Self { n: self.n, index: i }
    }

    /// Number of quarter turns if the rotation is a multiple of π/2.
    pub fn quarter_turns(&self) -> Option<usize> {
        if (4 * self.index) % self.n == 0 {
            Some(4 * self.index / self.n)
        } else {
            None
        }
    }

    /// All elements of `C_n` in index order.
    pub fn all(n: usize) -> Result<Vec<Self>> {
        (0..n as i64).map(|i| Self::new(n, i)).collect()
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.index, self.n)
    }
}

/// `round(theta·n/2π)` with ties rounded toward zero.
pub fn quantize_angle(theta: f64, n: usize) -> i64 {
    let x = theta * n as f64 / (2.0 * PI);
    let floor = x.floor();
    let frac = x - floor;
    let r = if frac > 0.5 {
        floor + 1.0
    } else if frac < 0.5 {
        floor
    } else if x > 0.0 {
        floor
    } else {
        floor + 1.0
    };
    r as i64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RepKind {
    Trivial,
    Standard,
    Regular,
    Quotient { k: usize },
}

/// A real representation of `C_n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Representation {
    pub kind: RepKind,
    pub n: usize,
}

impl Representation {
    pub fn trivial(n: usize) -> Result<Self> {
        Self::checked(RepKind::Trivial, n)
    }

    pub fn standard(n: usize) -> Result<Self> {
        Self::checked(RepKind::Standard, n)
    }

    pub fn regular(n: usize) -> Result<Self> {
        Self::checked(RepKind::Regular, n)
    }

    pub fn quotient(n: usize, k: usize) -> Result<Self> {
        Self::checked(RepKind::Quotient { k }, n)
    }

    pub fn checked(kind: RepKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroOrder);
        }
        if let RepKind::Quotient { k } = kind {
            if k == 0 || n % k != 0 {
                return Err(Error::BadDivisor { n, k });
            }
        }
        Ok(Self { kind, n })
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            RepKind::Trivial => 1,
            RepKind::Standard => 2,
            RepKind::Regular => self.n,
            RepKind::Quotient { k } => self.n / k,
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.kind == RepKind::Trivial
    }

    pub fn is_permutation(&self) -> bool {
        !matches!(self.kind, RepKind::Standard)
    }

    fn check(&self, g: &GroupElement) -> Result<()> {
        if g.order() != self.n {
            return Err(Error::OrderMismatch(self.n, g.order()));
        }
        Ok(())
    }

    /// Source coordinate of every output coordinate: `(ρ(g)x)_j = x_{perm[j]}`.
    /// `None` for the standard representation.
    pub fn permutation(&self, g: &GroupElement) -> Result<Option<Vec<usize>>> {
        self.check(g)?;
        let d = self.dim();
        Ok(match self.kind {
            RepKind::Standard => None,
            RepKind::Trivial => Some(vec![0]),
            RepKind::Regular | RepKind::Quotient { .. } => {
                let shift = g.index() % d;
                Some((0..d).map(|j| (j + d - shift) % d).collect())
            }
        })
    }

    /// Dense `dim × dim` matrix `ρ(g)`, row-major.
    pub fn matrix(&self, g: &GroupElement) -> Result<Matrix> {
        self.check(g)?;
        let d = self.dim();
        let mut m = Matrix::zeros(d);
        match self.permutation(g)? {
            Some(perm) => {
                for (j, &src) in perm.iter().enumerate() {
                    m.set(j, src, 1.0);
                }
            }
            None => {
                let (s, c) = rotation_sin_cos(g);
                m.set(0, 0, c);
                m.set(0, 1, -s);
                m.set(1, 0, s);
                m.set(1, 1, c);
            }
        }
        Ok(m)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RepKind::Trivial => write!(f, "trivial(C{})", self.n),
            RepKind::Standard => write!(f, "standard(C{})", self.n),
            RepKind::Regular => write!(f, "regular(C{})", self.n),
            RepKind::Quotient { k } => write!(f, "quotient(C{}/C{})", self.n, k),
        }
    }
}

/// `(sin θ, cos θ)` for the rotation `g`, exact at multiples of π/4.
pub fn rotation_sin_cos(g: &GroupElement) -> (f64, f64) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    if (8 * g.index()) % g.order() == 0 {
        match 8 * g.index() / g.order() {
            0 => (0.0, 1.0),
            1 => (h, h),
            2 => (1.0, 0.0),
            3 => (h, -h),
            4 => (0.0, -1.0),
            5 => (-h, -h),
            6 => (-1.0, 0.0),
            _ => (-h, h),
        }
    } else {
        g.angle().sin_cos()
    }
}

/// Small dense square matrix used to certify representation properties.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        let d = self.dim;
        let mut out = Matrix::zeros(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..d {
                    out.data[r * d + c] += a * other.get(k, c);
                }
            }
        }
        out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * x[c]).sum())
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_permutation(&self) -> bool {
        let d = self.dim;
        (0..d).all(|r| {
            let row = &self.data[r * d..(r + 1) * d];
            row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
        }) && (0..d).all(|c| (0..d).filter(|&r| self.get(r, c) == 1.0).count() == 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(n: usize, i: i64) -> GroupElement {
        GroupElement::new(n, i).unwrap()
    }

    #[test]
    fn element_reduces_modulo_order() {
        assert_eq!(el(4, 5).index(), 1);
        assert_eq!(el(4, -1).index(), 3);
        assert!(el(8, 0).is_identity());
        assert!(matches!(GroupElement::new(0, 1), Err(Error::ZeroOrder)));
    }

    #[test]
    fn compose_and_inverse() {
        assert_eq!(el(4, 3).compose(&el(4, 2)).unwrap().index(), 1);
        let g = el(8, 3);
        assert_eq!(g.compose(&el(8, 0)).unwrap(), g);
        assert!(g.compose(&g.inverse()).unwrap().is_identity());
        assert_eq!(el(4, 1).inverse().index(), 3);
        assert!(el(4, 0).inverse().is_identity());
        assert_eq!(el(8, 4).inverse().index(), 4);
        assert!(matches!(el(4, 1).compose(&el(8, 1)), Err(Error::OrderMismatch(4, 8))));
    }

    #[test]
    fn regular_generator_moves_last_coordinate_first() {
        let rep = Representation::regular(4).unwrap();
        let m = rep.matrix(&el(4, 1)).unwrap();
        assert_eq!(m.apply(&[0.0, 1.0, 2.0, 3.0]), vec![3.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn trivial_and_standard_matrices() {
        let triv = Representation::trivial(8).unwrap();
        for g in GroupElement::all(8).unwrap() {
            assert_eq!(triv.matrix(&g).unwrap(), Matrix::identity(1));
        }
        let std = Representation::standard(4).unwrap();
        let m = std.matrix(&el(4, 1)).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 1.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn quotient_kernel_acts_trivially() {
        let rep = Representation::quotient(36, 2).unwrap();
        assert_eq!(rep.dim(), 18);
        assert_eq!(rep.matrix(&el(36, 18)).unwrap(), Matrix::identity(18));
        for i in 0..18 {
            assert_eq!(rep.matrix(&el(36, i)).unwrap(), rep.matrix(&el(36, i + 18)).unwrap());
        }
        assert!(matches!(Representation::quotient(36, 5), Err(Error::BadDivisor { .. })));
    }

    #[test]
    fn mismatched_order_is_rejected() {
        let rep = Representation::regular(4).unwrap();
        assert!(rep.matrix(&el(8, 1)).is_err());
    }

    #[test]
    fn angle_quantization_ties_toward_zero() {
        let bin = 2.0 * PI / 8.0;
        assert_eq!(quantize_angle(0.0, 8), 0);
        assert_eq!(quantize_angle(bin * 0.5, 8), 0);
        assert_eq!(quantize_angle(bin * 1.5, 8), 1);
        assert_eq!(quantize_angle(-bin * 0.5, 8), 0);
        assert_eq!(quantize_angle(bin * 0.51, 8), 1);
        assert_eq!(GroupElement::from_angle(8, -bin).unwrap().index(), 7);
    }

    #[test]
    fn homomorphism_and_unitarity() {
        for n in [4usize, 8] {
            let reps = [
                Representation::trivial(n).unwrap(),
                Representation::standard(n).unwrap(),
                Representation::regular(n).unwrap(),
                Representation::quotient(n, 2).unwrap(),
            ];
            for rep in reps {
                for g in GroupElement::all(n).unwrap() {
                    let mg = rep.matrix(&g).unwrap();
                    let inv = rep.matrix(&g.inverse()).unwrap();
                    assert!(mg.mul(&inv).max_abs_diff(&Matrix::identity(rep.dim())) <= 1e-12);
                    for h in GroupElement::all(n).unwrap() {
                        let lhs = mg.mul(&rep.matrix(&h).unwrap());
                        let rhs = rep.matrix(&g.compose(&h).unwrap()).unwrap();
                        let tol = if rep.is_permutation() { 0.0 } else { 1e-12 };
                        assert!(lhs.max_abs_diff(&rhs) <= tol, "{rep} {g} {h}");
                    }
                    if rep.is_permutation() {
                        assert!(mg.is_permutation());
                    }
                }
            }
        }
    }
}
