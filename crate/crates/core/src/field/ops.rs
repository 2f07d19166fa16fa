use super::{FeatureField, FieldType, Kernel};
use crate::error::{shape_err, Result};
use crate::kernels::{correlate_forward, ConvShape};
use crate::real::Real;

/// `(K ⋆ f)(v) = Σ_w f(v + w)·K(w)` over the field zero-padded by `padding`.
///
/// The result has `kernel.out_channels()` trivial channels and spatial size
/// `H + 2·padding − r + 1` per axis.
pub fn cross_correlate<T: Real>(kernel: &Kernel<T>, field: &FeatureField<T>, padding: usize) -> Result<FeatureField<T>> {
    if kernel.in_channels() != field.channels() {
        return shape_err(format!(
            "kernel expects {} input channels, field has {}",
            kernel.in_channels(),
            field.channels()
        ));
    }
    let shape = ConvShape {
        cin: field.channels(),
        cout: kernel.out_channels(),
        h: field.height(),
        w: field.width(),
        r: kernel.size(),
        pad: padding,
    };
    if !shape.valid() {
        return shape_err(format!(
            "kernel of size {} larger than padded {}x{} field",
            kernel.size(),
            field.height() + 2 * padding,
            field.width() + 2 * padding
        ));
    }
    let ftype = FieldType::trivial(field.rep().n, kernel.out_channels())?;
    let mut out = FeatureField::zeros(ftype, shape.out_h(), shape.out_w());
    correlate_forward(&shape, field.data(), kernel.data(), out.data_mut());
    Ok(out)
}

/// `size × size` window centered on `(row, col)`; pixels outside the field read as 0.
pub fn crop<T: Real>(field: &FeatureField<T>, center: (i64, i64), size: usize) -> Result<FeatureField<T>> {
    if size % 2 == 0 {
        return shape_err(format!("crop size {size} is not odd"));
    }
    let half = (size / 2) as i64;
    let mut out = FeatureField::zeros(field.ftype(), size, size);
    for c in 0..field.channels() {
        for r in 0..size {
            let sr = center.0 - half + r as i64;
            if sr < 0 || sr >= field.height() as i64 {
                continue;
            }
            for col in 0..size {
                let sc = center.1 - half + col as i64;
                if sc < 0 || sc >= field.width() as i64 {
                    continue;
                }
                out.set(c, r, col, field.get(c, sr as usize, sc as usize));
            }
        }
    }
    Ok(out)
}

/// Adds `patch` into `target` with the patch center on `(row, col)`; the
/// adjoint of [`crop`].
pub fn embed<T: Real>(patch: &FeatureField<T>, center: (i64, i64), target: &mut FeatureField<T>) -> Result<()> {
    if patch.channels() != target.channels() {
        return shape_err("embed: channel mismatch");
    }
    let (hh, hw) = ((patch.height() / 2) as i64, (patch.width() / 2) as i64);
    for c in 0..patch.channels() {
        for r in 0..patch.height() {
            let tr = center.0 - hh + r as i64;
            if tr < 0 || tr >= target.height() as i64 {
                continue;
            }
            for col in 0..patch.width() {
                let tc = center.1 - hw + col as i64;
                if tc < 0 || tc >= target.width() as i64 {
                    continue;
                }
                let v = target.get(c, tr as usize, tc as usize) + patch.get(c, r, col);
                target.set(c, tr as usize, tc as usize, v);
            }
        }
    }
    Ok(())
}

/// Zero border of width `d` on all four sides.
pub fn pad<T: Real>(field: &FeatureField<T>, d: usize) -> FeatureField<T> {
    if d == 0 {
        return field.clone();
    }
    let (h, w) = (field.height() + 2 * d, field.width() + 2 * d);
    let mut out = FeatureField::zeros(field.ftype(), h, w);
    for c in 0..field.channels() {
        let src = field.channel(c);
        let dst = out.channel_mut(c);
        for r in 0..field.height() {
            dst[(r + d) * w + d..(r + d) * w + d + field.width()]
                .copy_from_slice(&src[r * field.width()..(r + 1) * field.width()]);
        }
    }
    out
}

/// Removes a border of width `d`; inverse of [`pad`].
pub fn unpad<T: Real>(field: &FeatureField<T>, d: usize) -> Result<FeatureField<T>> {
    if 2 * d >= field.height() || 2 * d >= field.width() {
        return shape_err("unpad: border wider than field");
    }
    let (h, w) = (field.height() - 2 * d, field.width() - 2 * d);
    let mut out = FeatureField::zeros(field.ftype(), h, w);
    for c in 0..field.channels() {
        for r in 0..h {
            for col in 0..w {
                out.set(c, r, col, field.get(c, r + d, col + d));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn impulse(size: usize, at: (usize, usize)) -> FeatureField<f64> {
        let mut f = FeatureField::zeros(FieldType::trivial(4, 1).unwrap(), size, size);
        f.set(0, at.0, at.1, 1.0);
        f
    }

    #[test]
    fn unit_kernel_is_identity() {
        let f = FeatureField::from_fn(FieldType::trivial(4, 1).unwrap(), 5, 5, |_, r, c| (r * 5 + c) as f64);
        let k = Kernel::new(1, 1, 1, vec![1.0]).unwrap();
        assert_eq!(cross_correlate(&k, &f, 0).unwrap(), f);
    }

    #[test]
    fn box_kernel_impulse_response() {
        let f = impulse(7, (3, 3));
        let k = Kernel::new(1, 1, 3, vec![1.0; 9]).unwrap();
        let out = cross_correlate(&k, &f, 1).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let inside = (2..=4).contains(&r) && (2..=4).contains(&c);
                assert_eq!(out.get(0, r, c), if inside { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn correlation_errors() {
        let f = impulse(3, (1, 1));
        let k = Kernel::new(1, 2, 3, vec![0.0; 18]).unwrap();
        assert!(cross_correlate(&k, &f, 0).is_err());
        let big = Kernel::new(1, 1, 5, vec![0.0; 25]).unwrap();
        assert!(cross_correlate(&big, &f, 0).is_err());
        assert!(cross_correlate(&big, &f, 1).is_ok());
    }

    #[test]
    fn crop_whole_and_impulse() {
        let f = FeatureField::from_fn(FieldType::trivial(4, 1).unwrap(), 7, 7, |_, r, c| (r * 7 + c) as f64);
        assert_eq!(crop(&f, (3, 3), 7).unwrap(), f);
        let imp = impulse(9, (2, 6));
        let c = crop(&imp, (2, 6), 5).unwrap();
        assert_eq!(c.get(0, 2, 2), 1.0);
        assert_eq!(c.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn crop_embed_round_trip() {
        let f = FeatureField::from_fn(FieldType::trivial(4, 2).unwrap(), 8, 8, |ch, r, c| (ch * 64 + r * 8 + c) as f64 + 1.0);
        let patch = crop(&f, (1, 6), 5).unwrap();
        let mut target = FeatureField::zeros(f.ftype(), 8, 8);
        embed(&patch, (1, 6), &mut target).unwrap();
        for ch in 0..2 {
            for r in 0..8 {
                for c in 0..8 {
                    let inside = r <= 3 && (4..=7).contains(&c);
                    let expect = if inside { f.get(ch, r, c) } else { 0.0 };
                    assert_eq!(target.get(ch, r, c), expect);
                }
            }
        }
    }

    #[test]
    fn pad_and_unpad() {
        let f = FeatureField::scalar(4, &[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(pad(&f, 0), f);
        let p = pad(&f, 1);
        assert_eq!((p.height(), p.width()), (4, 4));
        assert_eq!(p.data().iter().sum::<f64>(), 10.0);
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(0, 1, 1), 1.0);
        assert_eq!(unpad(&p, 1).unwrap(), f);
    }
}
