//! Typed feature fields over a square pixel grid and the group action on them.

pub(crate) mod io;
mod ops;
mod rotate;

pub use io::{read_field, write_field, FIELD_MAGIC};
pub use ops::{crop, cross_correlate, embed, pad, unpad};
pub use rotate::{act, act_with, lift, rotate_grid, rotate_point, RotationMode, RotationPlan, ValidityMask};

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::group::{RepKind, Representation};
use crate::real::Real;

/// Representation type and multiplicity of a field: `channels = multiplicity · rep.dim()`.
/// Channels are laid out multiplicity-major (block `m` holds coordinates `m·dim .. (m+1)·dim`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldType {
    pub rep: Representation,
    pub multiplicity: usize,
}

impl FieldType {
    pub fn new(rep: Representation, multiplicity: usize) -> Self {
        Self { rep, multiplicity }
    }

    pub fn trivial(n: usize, multiplicity: usize) -> Result<Self> {
        Ok(Self::new(Representation::trivial(n)?, multiplicity))
    }

    pub fn regular(n: usize, multiplicity: usize) -> Result<Self> {
        Ok(Self::new(Representation::regular(n)?, multiplicity))
    }

    pub fn quotient(n: usize, k: usize, multiplicity: usize) -> Result<Self> {
        Ok(Self::new(Representation::quotient(n, k)?, multiplicity))
    }

    pub fn channels(&self) -> usize {
        self.multiplicity * self.rep.dim()
    }

    pub fn is_trivial(&self) -> bool {
        self.rep.kind == RepKind::Trivial
    }

    pub fn is_regular(&self) -> bool {
        self.rep.kind == RepKind::Regular
    }
}

impl std::fmt::Display for FieldType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.multiplicity, self.rep)
    }
}

/// A `channels × height × width` array tagged with its field type.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureField<T> {
    ftype: FieldType,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureField<T> {
    pub fn new(ftype: FieldType, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if ftype.multiplicity == 0 {
            return shape_err("multiplicity must be positive");
        }
        let expected = ftype.channels() * height * width;
        if data.len() != expected {
            return shape_err(format!(
                "{} values for {} channels of {}x{}",
                data.len(),
                ftype.channels(),
                height,
                width
            ));
        }
        Ok(Self { ftype, height, width, data })
    }

    pub fn zeros(ftype: FieldType, height: usize, width: usize) -> Self {
        Self {
            ftype,
            height,
            width,
            data: vec![T::zero(); ftype.channels() * height * width],
        }
    }

    pub fn from_fn(ftype: FieldType, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut out = Self::zeros(ftype, height, width);
        for c in 0..ftype.channels() {
            for r in 0..height {
                for col in 0..width {
                    out.data[(c * height + r) * width + col] = f(c, r, col);
                }
            }
        }
        out
    }

    /// Single-channel trivial field from rows.
    pub fn scalar(n: usize, rows: &[Vec<T>]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return shape_err("ragged rows");
        }
        Self::new(FieldType::trivial(n, 1)?, h, w, rows.concat())
    }

    pub fn ftype(&self) -> FieldType {
        self.ftype
    }

    pub fn rep(&self) -> Representation {
        self.ftype.rep
    }

    pub fn channels(&self) -> usize {
        self.ftype.channels()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> T {
        self.data[(c * self.height + r) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, c: usize, r: usize, col: usize, v: T) {
        self.data[(c * self.height + r) * self.width + col] = v;
    }

    /// Same data under a different type with the same channel count.
    pub fn with_type(mut self, ftype: FieldType) -> Result<Self> {
        if ftype.channels() != self.channels() {
            return shape_err(format!("cannot retag {} channels as {}", self.channels(), ftype));
        }
        self.ftype = ftype;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            ftype: self.ftype,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureField<U> {
        FeatureField {
            ftype: self.ftype,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels() == other.channels() && self.height == other.height && self.width == other.width
    }

    /// Elementwise sum with a field of the same shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return shape_err("add: shape mismatch");
        }
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return shape_err("add_assign: shape mismatch");
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Largest absolute elementwise difference, restricted to pixels where `mask` holds.
    pub fn max_abs_diff(&self, other: &Self, mask: Option<&ValidityMask>) -> Result<f64> {
        if !self.same_shape(other) {
            return shape_err("max_abs_diff: shape mismatch");
        }
        let p = self.plane();
        let mut worst = 0.0f64;
        for (i, (&a, &b)) in self.data.iter().zip(&other.data).enumerate() {
            if let Some(m) = mask {
                if !m.valid()[i % p] {
                    continue;
                }
            }
            worst = worst.max((a - b).abs().f64());
        }
        Ok(worst)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs().f64()))
    }

    /// Channel-wise concatenation; both fields must share the representation.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.height != other.height || self.width != other.width {
            return shape_err("concat: spatial mismatch");
        }
        if self.ftype.rep != other.ftype.rep {
            return Err(Error::UnsupportedTypes(format!("concat {} with {}", self.ftype, other.ftype)));
        }
        let ftype = FieldType::new(self.ftype.rep, self.ftype.multiplicity + other.ftype.multiplicity);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self::new(ftype, self.height, self.width, data)
    }

    /// Flat row-major index of the largest value; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the first maximum.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Correlation kernel `out_channels × in_channels × r × r`, `r` odd.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<T> {
    out_channels: usize,
    in_channels: usize,
    size: usize,
    data: Vec<T>,
}

impl<T: Real> Kernel<T> {
    pub fn new(out_channels: usize, in_channels: usize, size: usize, data: Vec<T>) -> Result<Self> {
        if size % 2 == 0 {
            return shape_err(format!("kernel size {size} is not odd"));
        }
        if data.len() != out_channels * in_channels * size * size {
            return shape_err("kernel data length");
        }
        Ok(Self { out_channels, in_channels, size, data })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, size: usize) -> Result<Self> {
        Self::new(out_channels, in_channels, size, vec![T::zero(); out_channels * in_channels * size * size])
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tap(&self, o: usize, i: usize) -> &[T] {
        let a = self.size * self.size;
        &self.data[(o * self.in_channels + i) * a..(o * self.in_channels + i + 1) * a]
    }

    pub fn tap_mut(&mut self, o: usize, i: usize) -> &mut [T] {
        let a = self.size * self.size;
        &mut self.data[(o * self.in_channels + i) * a..(o * self.in_channels + i + 1) * a]
    }

    /// `T⁰_g` applied to every spatial tap.
    pub fn rotated(&self, g: &crate::group::GroupElement, mode: RotationMode) -> Result<Self> {
        let plan = RotationPlan::new(self.size, g, mode)?;
        let mut out = Self::zeros(self.out_channels, self.in_channels, self.size)?;
        for o in 0..self.out_channels {
            for i in 0..self.in_channels {
                plan.apply(self.tap(o, i), out.tap_mut(o, i));
            }
        }
        Ok(out)
    }
}

/// `R_n(f)`: the `n` rotated copies of a field, rotation-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedStack<T> {
    n: usize,
    source: FieldType,
    size: usize,
    data: Vec<T>,
}

impl<T: Real> LiftedStack<T> {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn source_type(&self) -> FieldType {
        self.source
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn slice(&self, i: usize) -> FeatureField<T> {
        let len = self.source.channels() * self.size * self.size;
        FeatureField {
            ftype: self.source,
            height: self.size,
            width: self.size,
            data: self.data[i * len..(i + 1) * len].to_vec(),
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Slice `i` becomes output channel block `i` of a correlation kernel.
    pub fn into_kernel(self) -> Result<Kernel<T>> {
        if self.size % 2 == 0 {
            return shape_err("lifted stack used as kernel must have odd size");
        }
        Kernel::new(self.n, self.source.channels(), self.size, self.data)
    }

    /// Stack with slices permuted by the regular representation: slice `j` of
    /// the result is slice `perm[j]` of `self`.
    pub fn permuted(&self, g: &crate::group::GroupElement) -> Result<Self> {
        let perm = Representation::regular(self.n)?
            .permutation(g)?
            .expect("regular representation is a permutation");
        let len = self.source.channels() * self.size * self.size;
        let mut data = Vec::with_capacity(self.data.len());
        for &src in &perm {
            data.extend_from_slice(&self.data[src * len..(src + 1) * len]);
        }
        Ok(Self { data, ..self.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_rejects_bad_lengths() {
        let t = FieldType::trivial(4, 2).unwrap();
        assert!(FeatureField::<f64>::new(t, 3, 3, vec![0.0; 17]).is_err());
        assert!(FeatureField::<f64>::new(t, 3, 3, vec![0.0; 18]).is_ok());
    }

    #[test]
    fn concat_sums_multiplicities() {
        let t = FieldType::regular(4, 1).unwrap();
        let a = FeatureField::<f64>::zeros(t, 2, 2);
        let b = FeatureField::<f64>::zeros(FieldType::regular(4, 2).unwrap(), 2, 2);
        let c = a.concat(&b).unwrap();
        assert_eq!(c.ftype().multiplicity, 3);
        assert_eq!(c.channels(), 12);
        let triv = FeatureField::<f64>::zeros(FieldType::trivial(4, 1).unwrap(), 2, 2);
        assert!(a.concat(&triv).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.5f32; 6]), 0);
    }

    #[test]
    fn even_kernels_rejected() {
        assert!(Kernel::<f64>::zeros(1, 1, 4).is_err());
    }
}
