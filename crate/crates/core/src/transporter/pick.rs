use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::nn::Network;
use crate::real::Real;

/// Reinterprets raw scene channels as the network's input type.
pub(crate) fn as_input<T: Real>(net: &Network<T>, field: &FeatureField<T>) -> Result<FeatureField<T>> {
    let want = net.input_type();
    if field.channels() != want.channels() {
        return Err(Error::Shape(format!(
            "{} expects {} channels, got {}",
            net.spec().name,
            want.channels(),
            field.channels()
        )));
    }
    field.clone().with_type(want)
}

/// Pick-position logits `f_p(o_t)`: one channel over the scene grid.
pub fn pick_position<T: Real>(f_p: &Network<T>, obs: &FeatureField<T>) -> Result<FeatureField<T>> {
    let out = f_p.infer(&as_input(f_p, obs)?)?;
    if out.channels() != 1 || out.height() != obs.height() || out.width() != obs.width() {
        return Err(Error::Shape(format!("{} must map a scene to one scene-sized channel", f_p.spec().name)));
    }
    Ok(out)
}

/// Gripper-angle logits `f_θ(c)` over the `n/2` bins of `[0, π)`.
pub fn pick_angle<T: Real>(f_theta: &Network<T>, crop: &FeatureField<T>) -> Result<Vec<T>> {
    if !crop.is_square() || crop.height() % 2 == 0 {
        return Err(Error::NotSquare {
            height: crop.height(),
            width: crop.width(),
        });
    }
    let out = f_theta.infer(&as_input(f_theta, crop)?)?;
    if out.height() != 1 || out.width() != 1 {
        return Err(Error::Shape(format!("{} must pool to a single pixel", f_theta.spec().name)));
    }
    Ok(out.into_data())
}
