use serde::{Deserialize, Serialize};

use super::pick::as_input;
use crate::error::{Error, Result};
use crate::field::{lift, pad, FeatureField, FieldType, Kernel, RotationMode, RotationPlan};
use crate::group::GroupElement;
use crate::kernels::{correlate_backward_input, correlate_backward_kernel, correlate_forward, ConvShape};
use crate::nn::{ForwardCache, Gradients, Network};
use crate::real::Real;

/// How the crop encoder meets the rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceHead {
    /// Encode the crop once with an equivariant `ψ`, then lift the encoding.
    Equivariant,
    /// Lift the crop, then encode every rotated copy with a plain `ψ`.
    Baseline,
}

/// Everything the place backward pass needs.
pub struct PlaceCache<T> {
    head: PlaceHead,
    n: usize,
    psi: Vec<ForwardCache<T>>,
    phi: ForwardCache<T>,
    phi_out: FeatureField<T>,
    kernel: Kernel<T>,
    plans: Vec<RotationPlan>,
    shape: ConvShape,
}

fn rotation_plans(n: usize, size: usize) -> Result<Vec<RotationPlan>> {
    (0..n)
        .map(|i| RotationPlan::new(size, &GroupElement::new(n, i as i64)?, RotationMode::Bilinear))
        .collect()
}

/// Place logits `(ψ-template ⋆ φ(pad(o_t)))` over `n` rotations, typed as a
/// regular field so rotations of the whole problem act on it by `T^reg`.
pub fn place_forward<T: Real>(
    head: PlaceHead,
    psi: &Network<T>,
    phi: &Network<T>,
    crop: &FeatureField<T>,
    obs: &FeatureField<T>,
    n: usize,
) -> Result<(FeatureField<T>, PlaceCache<T>)> {
    if !crop.is_square() || crop.height() % 2 == 0 {
        return Err(Error::NotSquare {
            height: crop.height(),
            width: crop.width(),
        });
    }
    let r = crop.height();
    let padded = pad(obs, r / 2);
    let (phi_out, phi_cache) = phi.forward(&as_input(phi, &padded)?)?;
    let plans = rotation_plans(n, r)?;
    let (kernel, psi_caches) = match head {
        PlaceHead::Equivariant => {
            let (psi_out, cache) = psi.forward(&as_input(psi, crop)?)?;
            let c = psi_out.channels();
            let mut k = Kernel::zeros(n, c, r)?;
            for (i, plan) in plans.iter().enumerate() {
                for ch in 0..c {
                    plan.apply(psi_out.channel(ch), k.tap_mut(i, ch));
                }
            }
            (k, vec![cache])
        }
        PlaceHead::Baseline => {
            let stack = lift(crop, n)?;
            let mut caches = Vec::with_capacity(n);
            let mut data = Vec::new();
            for i in 0..n {
                let (out, cache) = psi.forward(&as_input(psi, &stack.slice(i))?)?;
                data.extend_from_slice(out.data());
                caches.push(cache);
            }
            let c = data.len() / (n * r * r);
            (Kernel::new(n, c, r, data)?, caches)
        }
    };
    if kernel.in_channels() != phi_out.channels() {
        return Err(Error::Shape(format!(
            "crop encoder emits {} channels, scene encoder {}",
            kernel.in_channels(),
            phi_out.channels()
        )));
    }
    let shape = ConvShape {
        cin: phi_out.channels(),
        cout: n,
        h: phi_out.height(),
        w: phi_out.width(),
        r,
        pad: 0,
    };
    let mut out = FeatureField::zeros(FieldType::regular(n, 1)?, shape.out_h(), shape.out_w());
    correlate_forward(&shape, phi_out.data(), kernel.data(), out.data_mut());
    let cache = PlaceCache {
        head,
        n,
        psi: psi_caches,
        phi: phi_cache,
        phi_out,
        kernel,
        plans,
        shape,
    };
    Ok((out, cache))
}

/// Parameter gradients of `ψ` and `φ` given `∂L/∂logits`.
pub fn place_backward<T: Real>(
    psi: &Network<T>,
    phi: &Network<T>,
    cache: &PlaceCache<T>,
    grad: &FeatureField<T>,
) -> Result<(Gradients<T>, Gradients<T>)> {
    let s = &cache.shape;
    if grad.channels() != cache.n || grad.height() != s.out_h() || grad.width() != s.out_w() {
        return Err(Error::CacheMismatch);
    }
    let mut g_phi_out = FeatureField::zeros(cache.phi_out.ftype(), s.h, s.w);
    correlate_backward_input(s, cache.kernel.data(), grad.data(), g_phi_out.data_mut());
    let mut g_kernel = Kernel::zeros(cache.n, s.cin, s.r)?;
    correlate_backward_kernel(s, cache.phi_out.data(), grad.data(), g_kernel.data_mut());
    let (phi_grads, _) = phi.backward(&cache.phi, &g_phi_out)?;
    let psi_type = psi.output_type();
    let psi_grads = match cache.head {
        PlaceHead::Equivariant => {
            let mut g = FeatureField::zeros(psi_type, s.r, s.r);
            for (i, plan) in cache.plans.iter().enumerate() {
                for ch in 0..s.cin {
                    plan.apply_transpose_add(g_kernel.tap(i, ch), g.channel_mut(ch));
                }
            }
            psi.backward(&cache.psi[0], &g)?.0
        }
        PlaceHead::Baseline => {
            let mut total = Gradients::zeros_like(psi);
            let len = s.cin * s.r * s.r;
            for (i, c) in cache.psi.iter().enumerate() {
                let g = FeatureField::new(psi_type, s.r, s.r, g_kernel.data()[i * len..(i + 1) * len].to_vec())?;
                total.accumulate(&psi.backward(c, &g)?.0);
            }
            total
        }
    };
    Ok((psi_grads, phi_grads))
}

/// `Ψ(c) ⋆ φ(o_t)` with `Ψ(c) = R_n[ψ(c)]`: the crop is encoded once.
pub fn place_equivariant<T: Real>(
    psi: &Network<T>,
    phi: &Network<T>,
    crop: &FeatureField<T>,
    obs: &FeatureField<T>,
    n: usize,
) -> Result<FeatureField<T>> {
    place_forward(PlaceHead::Equivariant, psi, phi, crop, obs, n).map(|(out, _)| out)
}

/// `ψ(R_n(c)) ⋆ φ(o_t)`: every rotated crop is encoded separately.
pub fn place_baseline<T: Real>(
    psi: &Network<T>,
    phi: &Network<T>,
    crop: &FeatureField<T>,
    obs: &FeatureField<T>,
    n: usize,
) -> Result<FeatureField<T>> {
    place_forward(PlaceHead::Baseline, psi, phi, crop, obs, n).map(|(out, _)| out)
}
