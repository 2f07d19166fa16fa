//! Spatial rotation of square grids about the grid center and the induced
//! group action on typed fields.
//!
//! Pixel `(row, col)` sits at `x = (col − c, c − row)` with `c = (size − 1)/2`,
//! i.e. x to the right and y up, and rotations are counterclockwise. The
//! rotated field takes the value `f(ρ₁(g)⁻¹x)` at `x`.

use super::{FeatureField, LiftedStack};
use crate::error::{Error, Result};
use crate::group::{rotation_sin_cos, GroupElement, RepKind};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RotationMode {
    /// Pure index permutation; only multiples of π/2.
    Exact90,
    /// Bilinear interpolation with zero fill. Quarter turns are still exact.
    #[default]
    Bilinear,
}

/// Pixels whose rotated value did not need samples from outside the grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            height,
            width,
            valid: (0..height * width).map(|i| f(i / width, i % width)).collect(),
        }
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &Self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            valid: self.valid.iter().zip(&other.valid).map(|(&a, &b)| a && b).collect(),
        }
    }

    /// Shrinks the valid region by `margin` pixels in every direction.
    pub fn eroded(&self, margin: usize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let m = margin as isize;
        let mut valid = vec![false; self.valid.len()];
        for r in 0..h {
            for c in 0..w {
                let mut ok = true;
                'scan: for dr in -m..=m {
                    for dc in -m..=m {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= h || cc >= w || !self.valid[(rr * w + cc) as usize] {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
                valid[(r * w + c) as usize] = ok;
            }
        }
        Self {
            height: self.height,
            width: self.width,
            valid,
        }
    }
}

#[derive(Clone, Debug)]
enum PlanKind {
    /// `out[p] = in[src[p]]`
    Permutation(Vec<u32>),
    /// `out[p] = Σ weight[e]·in[src[e]]` for `e` in `offsets[p]..offsets[p+1]`
    Interp {
        offsets: Vec<u32>,
        src: Vec<u32>,
        weight: Vec<f64>,
    },
}

/// Precomputed linear map realizing one rotation of a `size × size` plane.
#[derive(Clone, Debug)]
pub struct RotationPlan {
    size: usize,
    kind: PlanKind,
    mask: ValidityMask,
}

impl RotationPlan {
    pub fn new(size: usize, g: &GroupElement, mode: RotationMode) -> Result<Self> {
        if let Some(q) = g.quarter_turns() {
            return Ok(Self::quarter(size, q));
        }
        if mode == RotationMode::Exact90 {
            return Err(Error::NotQuarterTurn {
                n: g.order(),
                index: g.index(),
            });
        }
        Ok(Self::bilinear(size, g))
    }

    fn quarter(size: usize, q: usize) -> Self {
        let s = size;
        let mut src = Vec::with_capacity(s * s);
        for r in 0..s {
            for c in 0..s {
                let (sr, sc) = match q % 4 {
                    0 => (r, c),
                    1 => (c, s - 1 - r),
                    2 => (s - 1 - r, s - 1 - c),
                    _ => (s - 1 - c, r),
                };
                src.push((sr * s + sc) as u32);
            }
        }
        Self {
            size,
            kind: PlanKind::Permutation(src),
            mask: ValidityMask::full(size, size),
        }
    }

    fn bilinear(size: usize, g: &GroupElement) -> Self {
        let (sin, cos) = rotation_sin_cos(g);
        let center = (size as f64 - 1.0) / 2.0;
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r
            } else {
                v
            }
        };
        let mut offsets = Vec::with_capacity(size * size + 1);
        let mut src = Vec::new();
        let mut weight = Vec::new();
        let mut valid = Vec::with_capacity(size * size);
        offsets.push(0u32);
        for r in 0..size {
            for c in 0..size {
                let x = c as f64 - center;
                let y = center - r as f64;
                // ρ₁(g)⁻¹ x
                let xs = cos * x + sin * y;
                let ys = -sin * x + cos * y;
                let col = snap(xs + center);
                let row = snap(center - ys);
                let (r0, c0) = (row.floor(), col.floor());
                let (fr, fc) = (row - r0, col - c0);
                let mut clean = true;
                for (dr, dc, w) in [
                    (0.0, 0.0, (1.0 - fr) * (1.0 - fc)),
                    (0.0, 1.0, (1.0 - fr) * fc),
                    (1.0, 0.0, fr * (1.0 - fc)),
                    (1.0, 1.0, fr * fc),
                ] {
                    if w <= 1e-12 {
                        continue;
                    }
                    let (rr, cc) = (r0 + dr, c0 + dc);
                    if rr < 0.0 || cc < 0.0 || rr >= size as f64 || cc >= size as f64 {
                        clean = false;
                        continue;
                    }
                    src.push((rr as usize * size + cc as usize) as u32);
                    weight.push(w);
                }
                offsets.push(src.len() as u32);
                valid.push(clean);
            }
        }
        Self {
            size,
            kind: PlanKind::Interp { offsets, src, weight },
            mask: ValidityMask {
                height: size,
                width: size,
                valid,
            },
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_permutation(&self) -> bool {
        matches!(self.kind, PlanKind::Permutation(_))
    }

    pub fn mask(&self) -> &ValidityMask {
        &self.mask
    }

    /// Rotates one plane: `dst = P·src`.
    pub fn apply<T: Real>(&self, src: &[T], dst: &mut [T]) {
        match &self.kind {
            PlanKind::Permutation(p) => {
                for (d, &s) in dst.iter_mut().zip(p) {
                    *d = src[s as usize];
                }
            }
            PlanKind::Interp { offsets, src: idx, weight } => {
                for (p, d) in dst.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for e in offsets[p] as usize..offsets[p + 1] as usize {
                        acc += T::of(weight[e]) * src[idx[e] as usize];
                    }
                    *d = acc;
                }
            }
        }
    }

    /// Adjoint accumulation: `src_grad += Pᵀ·dst_grad`.
    pub fn apply_transpose_add<T: Real>(&self, dst_grad: &[T], src_grad: &mut [T]) {
        match &self.kind {
            PlanKind::Permutation(p) => {
                for (&g, &s) in dst_grad.iter().zip(p) {
                    src_grad[s as usize] += g;
                }
            }
            PlanKind::Interp { offsets, src: idx, weight } => {
                for (p, &g) in dst_grad.iter().enumerate() {
                    for e in offsets[p] as usize..offsets[p + 1] as usize {
                        src_grad[idx[e] as usize] += T::of(weight[e]) * g;
                    }
                }
            }
        }
    }
}

/// Pixel motion only (`T⁰_g` on every channel), plus the validity mask.
pub fn rotate_grid<T: Real>(
    field: &FeatureField<T>,
    g: &GroupElement,
    mode: RotationMode,
) -> Result<(FeatureField<T>, ValidityMask)> {
    if !field.is_square() {
        return Err(Error::NotSquare {
            height: field.height(),
            width: field.width(),
        });
    }
    let plan = RotationPlan::new(field.height(), g, mode)?;
    let mut out = FeatureField::zeros(field.ftype(), field.height(), field.width());
    for c in 0..field.channels() {
        plan.apply(field.channel(c), out.channel_mut(c));
    }
    Ok((out, plan.mask.clone()))
}

/// `T^ρ_g f`: rotate the grid, then transform every channel block by `ρ(g)`.
pub fn act<T: Real>(g: &GroupElement, field: &FeatureField<T>) -> Result<FeatureField<T>> {
    act_with(g, field, RotationMode::Bilinear).map(|(f, _)| f)
}

pub fn act_with<T: Real>(
    g: &GroupElement,
    field: &FeatureField<T>,
    mode: RotationMode,
) -> Result<(FeatureField<T>, ValidityMask)> {
    let rep = field.rep();
    if !rep.is_trivial() && rep.n != g.order() {
        return Err(Error::OrderMismatch(rep.n, g.order()));
    }
    let (rotated, mask) = rotate_grid(field, g, mode)?;
    if rep.is_trivial() {
        return Ok((rotated, mask));
    }
    let d = rep.dim();
    let mut out = FeatureField::zeros(field.ftype(), field.height(), field.width());
    match rep.kind {
        RepKind::Standard => {
            let m = rep.matrix(g)?;
            let p = field.plane();
            for block in 0..field.ftype().multiplicity {
                for a in 0..2 {
                    for b in 0..2 {
                        let w = T::of(m.get(a, b));
                        if w == T::zero() {
                            continue;
                        }
                        for i in 0..p {
                            let v = rotated.channel(block * 2 + b)[i];
                            out.channel_mut(block * 2 + a)[i] += w * v;
                        }
                    }
                }
            }
        }
        _ => {
            let perm = rep.permutation(g)?.expect("permutation representation");
            for block in 0..field.ftype().multiplicity {
                for (j, &src) in perm.iter().enumerate() {
                    out.channel_mut(block * d + j)
                        .copy_from_slice(rotated.channel(block * d + src));
                }
            }
        }
    }
    Ok((out, mask))
}

/// `R_n(f)`: slice `i` is `T⁰_{2πi/n} f`; slice 0 is the input itself.
pub fn lift<T: Real>(field: &FeatureField<T>, n: usize) -> Result<LiftedStack<T>> {
    if !field.is_square() {
        return Err(Error::NotSquare {
            height: field.height(),
            width: field.width(),
        });
    }
    let mut data = Vec::with_capacity(n * field.data().len());
    for i in 0..n {
        let g = GroupElement::new(n, i as i64)?;
        let (rot, _) = rotate_grid(field, &g, RotationMode::Bilinear)?;
        data.extend_from_slice(rot.data());
    }
    Ok(LiftedStack {
        n,
        source: field.ftype(),
        size: field.height(),
        data,
    })
}

/// `ρ₁(g)` applied to pixel `(row, col)` about the center of a `size × size` grid.
pub fn rotate_point(size: usize, row: f64, col: f64, g: &GroupElement) -> (f64, f64) {
    let (sin, cos) = rotation_sin_cos(g);
    let c = (size as f64 - 1.0) / 2.0;
    let x = col - c;
    let y = c - row;
    let xr = cos * x - sin * y;
    let yr = sin * x + cos * y;
    (c - yr, xr + c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldType;

    fn g(n: usize, i: i64) -> GroupElement {
        GroupElement::new(n, i).unwrap()
    }

    fn ramp(size: usize, channels: usize) -> FeatureField<f64> {
        FeatureField::from_fn(FieldType::trivial(4, channels).unwrap(), size, size, |c, r, col| {
            (c * 100 + r * size + col) as f64
        })
    }

    #[test]
    fn quarter_turn_of_two_by_two() {
        let f = FeatureField::scalar(4, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let (out, _) = rotate_grid(&f, &g(4, 1), RotationMode::Exact90).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn identity_is_byte_identical() {
        let f = ramp(5, 2).map(|v| v.sin());
        let (out, mask) = rotate_grid(&f, &g(8, 0), RotationMode::Bilinear).unwrap();
        assert_eq!(out, f);
        assert_eq!(mask.count(), 25);
    }

    #[test]
    fn four_quarter_turns_cycle() {
        let f = ramp(6, 1).map(|v| v.cos());
        let mut cur = f.clone();
        for _ in 0..4 {
            cur = rotate_grid(&cur, &g(4, 1), RotationMode::Exact90).unwrap().0;
        }
        assert_eq!(cur, f);
    }

    #[test]
    fn exact_mode_rejects_eighth_turns() {
        let f = ramp(5, 1);
        assert!(matches!(
            rotate_grid(&f, &g(8, 1), RotationMode::Exact90),
            Err(Error::NotQuarterTurn { .. })
        ));
        let rect = FeatureField::<f64>::zeros(FieldType::trivial(4, 1).unwrap(), 3, 4);
        assert!(matches!(rotate_grid(&rect, &g(4, 1), RotationMode::Exact90), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn exact_rotation_preserves_values() {
        let f = ramp(7, 1).map(|v| (v * 0.37).sin());
        let (out, _) = rotate_grid(&f, &g(4, 3), RotationMode::Exact90).unwrap();
        let mut a = f.data().to_vec();
        let mut b = out.data().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn regular_action_shifts_channels() {
        let t = FieldType::regular(4, 1).unwrap();
        let f = FeatureField::from_fn(t, 3, 3, |c, _, _| (c + 1) as f64);
        let out = act(&g(4, 1), &f).unwrap();
        for (c, expect) in [4.0, 1.0, 2.0, 3.0].iter().enumerate() {
            assert!(out.channel(c).iter().all(|v| v == expect));
        }
    }

    #[test]
    fn action_order_mismatch() {
        let f = FeatureField::<f64>::zeros(FieldType::regular(4, 1).unwrap(), 3, 3);
        assert!(matches!(act(&g(8, 1), &f), Err(Error::OrderMismatch(4, 8))));
    }

    #[test]
    fn point_rotation_matches_grid_rotation() {
        let size = 6;
        let mut f = FeatureField::<f64>::zeros(FieldType::trivial(4, 1).unwrap(), size, size);
        f.set(0, 1, 4, 1.0);
        for q in 0..4 {
            let h = g(4, q);
            let (out, _) = rotate_grid(&f, &h, RotationMode::Exact90).unwrap();
            let (r, c) = rotate_point(size, 1.0, 4.0, &h);
            assert_eq!(out.get(0, r as usize, c as usize), 1.0);
        }
    }

    #[test]
    fn bilinear_transpose_is_adjoint() {
        let plan = RotationPlan::new(9, &g(8, 1), RotationMode::Bilinear).unwrap();
        let x: Vec<f64> = (0..81).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let y: Vec<f64> = (0..81).map(|i| ((i * 5) % 11) as f64 * 0.5).collect();
        let mut px = vec![0.0; 81];
        plan.apply(&x, &mut px);
        let mut pty = vec![0.0; 81];
        plan.apply_transpose_add(&y, &mut pty);
        let lhs: f64 = px.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&pty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn lift_slices() {
        let f = ramp(3, 1);
        let one = lift(&f, 1).unwrap();
        assert_eq!(one.slice(0), f);
        let four = lift(&f, 4).unwrap();
        let twice = rotate_grid(&rotate_grid(&f, &g(4, 1), RotationMode::Exact90).unwrap().0, &g(4, 1), RotationMode::Exact90)
            .unwrap()
            .0;
        assert_eq!(four.slice(2), twice);
    }
}
