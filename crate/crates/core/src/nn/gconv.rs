//! Group convolution over `C_n` by filter-orbit expansion.
//!
//! Each layer stores one base filter per (output block, input block, input
//! orbit position). The full correlation kernel is assembled from rotated and
//! cyclically shifted copies of the base filters, so the equivariance
//! constraint holds by construction:
//!
//! * trivial → regular: `K[o·n + j][i] = T_{g^j} B[o][i][0]`
//! * regular → regular: `K[o·n + j][i·n + l] = T_{g^j} B[o][i][(l − j) mod n]`
//! * trivial → trivial: `K[o][i] = (1/n) Σ_j T_{g^j} B[o][i][0]`
//!
//! Regular → trivial is not a convolution here; use group pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureField, FieldType, Kernel, RotationMode, RotationPlan};
use crate::group::{GroupElement, RepKind};
use crate::kernels::{correlate_backward_input, correlate_backward_kernel, correlate_forward, ConvShape};
use crate::real::Real;
use crate::rng::CounterRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pairing {
    TrivialToTrivial,
    TrivialToRegular,
    RegularToRegular,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GConvSpec {
    pub n: usize,
    pub in_type: FieldType,
    pub out_type: FieldType,
    pub kernel_size: usize,
    /// Debug mutation: orbit copies are not rotated, which breaks equivariance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untied: bool,
}

impl GConvSpec {
    pub fn new(n: usize, in_type: FieldType, out_type: FieldType, kernel_size: usize) -> Self {
        Self {
            n,
            in_type,
            out_type,
            kernel_size,
            untied: false,
        }
    }

    pub fn pairing(&self) -> Result<Pairing> {
        let describe = || format!("{} -> {} over C{}", self.in_type, self.out_type, self.n);
        if self.kernel_size % 2 == 0 || self.n == 0 {
            return Err(Error::UnsupportedTypes(describe()));
        }
        for t in [&self.in_type, &self.out_type] {
            if t.rep.kind == RepKind::Regular && t.rep.n != self.n {
                return Err(Error::OrderMismatch(self.n, t.rep.n));
            }
            if t.multiplicity == 0 {
                return Err(Error::UnsupportedTypes(describe()));
            }
        }
        match (self.in_type.rep.kind, self.out_type.rep.kind) {
            (RepKind::Trivial, RepKind::Trivial) => Ok(Pairing::TrivialToTrivial),
            (RepKind::Trivial, RepKind::Regular) => Ok(Pairing::TrivialToRegular),
            (RepKind::Regular, RepKind::Regular) => Ok(Pairing::RegularToRegular),
            _ => Err(Error::UnsupportedTypes(describe())),
        }
    }

    fn orbit_in(&self) -> usize {
        if self.in_type.rep.kind == RepKind::Regular {
            self.n
        } else {
            1
        }
    }

    /// `[out_mult, in_mult, orbit, r, r]`
    pub fn weight_shape(&self) -> Vec<usize> {
        vec![
            self.out_type.multiplicity,
            self.in_type.multiplicity,
            self.orbit_in(),
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn bias_len(&self) -> usize {
        self.out_type.multiplicity
    }

    pub fn expanded_fan_in(&self) -> usize {
        self.in_type.channels() * self.kernel_size * self.kernel_size
    }

    pub fn padding(&self) -> usize {
        self.kernel_size / 2
    }

    /// Spatial rotation plans for orbit positions `0..n`.
    pub fn plans(&self) -> Result<Vec<RotationPlan>> {
        (0..self.n)
            .map(|j| {
                let g = GroupElement::new(self.n, j as i64)?;
                let g = if self.untied { GroupElement::identity(self.n)? } else { g };
                RotationPlan::new(self.kernel_size, &g, RotationMode::Bilinear)
            })
            .collect()
    }

    /// Centered uniform base weights with bound `√6/√(expanded fan-in)`; zero bias.
    pub fn init<T: Real>(&self, rng: &mut CounterRng) -> (Vec<T>, Vec<T>) {
        let bound = (6.0 / self.expanded_fan_in() as f64).sqrt();
        let w = (0..self.weight_len()).map(|_| T::of(rng.symmetric(bound))).collect();
        (w, vec![T::zero(); self.bias_len()])
    }
}

/// Assembles the full correlation kernel from base weights.
pub fn expand_kernel<T: Real>(spec: &GConvSpec, plans: &[RotationPlan], weights: &[T]) -> Result<Kernel<T>> {
    let pairing = spec.pairing()?;
    if weights.len() != spec.weight_len() {
        return Err(Error::Shape(format!("{} base weights, expected {}", weights.len(), spec.weight_len())));
    }
    let n = spec.n;
    let r = spec.kernel_size;
    let area = r * r;
    let (om, im) = (spec.out_type.multiplicity, spec.in_type.multiplicity);
    let mut k = Kernel::zeros(spec.out_type.channels(), spec.in_type.channels(), r)?;
    let base = |o: usize, i: usize, m: usize| {
        let orbit = spec.orbit_in();
        let start = ((o * im + i) * orbit + m) * area;
        &weights[start..start + area]
    };
    match pairing {
        Pairing::TrivialToTrivial => {
            let scale = T::of(1.0 / n as f64);
            let mut tmp = vec![T::zero(); area];
            for o in 0..om {
                for i in 0..im {
                    for plan in plans {
                        plan.apply(base(o, i, 0), &mut tmp);
                        for (d, &v) in k.tap_mut(o, i).iter_mut().zip(&tmp) {
                            *d += scale * v;
                        }
                    }
                }
            }
        }
        Pairing::TrivialToRegular => {
            for o in 0..om {
                for (j, plan) in plans.iter().enumerate() {
                    for i in 0..im {
                        plan.apply(base(o, i, 0), k.tap_mut(o * n + j, i));
                    }
                }
            }
        }
        Pairing::RegularToRegular => {
            for o in 0..om {
                for (j, plan) in plans.iter().enumerate() {
                    for i in 0..im {
                        for l in 0..n {
                            plan.apply(base(o, i, (l + n - j) % n), k.tap_mut(o * n + j, i * n + l));
                        }
                    }
                }
            }
        }
    }
    Ok(k)
}

/// Adjoint of [`expand_kernel`]: accumulates base-weight gradients, summing
/// over every orbit copy that shares a base filter.
pub fn expand_kernel_backward<T: Real>(
    spec: &GConvSpec,
    plans: &[RotationPlan],
    grad_kernel: &Kernel<T>,
    grad_weights: &mut [T],
) -> Result<()> {
    let pairing = spec.pairing()?;
    let n = spec.n;
    let area = spec.kernel_size * spec.kernel_size;
    let (om, im) = (spec.out_type.multiplicity, spec.in_type.multiplicity);
    let orbit = spec.orbit_in();
    let idx = |o: usize, i: usize, m: usize| ((o * im + i) * orbit + m) * area;
    match pairing {
        Pairing::TrivialToTrivial => {
            let scale = T::of(1.0 / n as f64);
            let mut tmp = vec![T::zero(); area];
            for o in 0..om {
                for i in 0..im {
                    let scaled: Vec<T> = grad_kernel.tap(o, i).iter().map(|&v| v * scale).collect();
                    for plan in plans {
                        tmp.iter_mut().for_each(|v| *v = T::zero());
                        plan.apply_transpose_add(&scaled, &mut tmp);
                        let s = idx(o, i, 0);
                        for (d, &v) in grad_weights[s..s + area].iter_mut().zip(&tmp) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Pairing::TrivialToRegular => {
            for o in 0..om {
                for (j, plan) in plans.iter().enumerate() {
                    for i in 0..im {
                        let s = idx(o, i, 0);
                        plan.apply_transpose_add(grad_kernel.tap(o * n + j, i), &mut grad_weights[s..s + area]);
                    }
                }
            }
        }
        Pairing::RegularToRegular => {
            for o in 0..om {
                for (j, plan) in plans.iter().enumerate() {
                    for i in 0..im {
                        for l in 0..n {
                            let s = idx(o, i, (l + n - j) % n);
                            plan.apply_transpose_add(grad_kernel.tap(o * n + j, i * n + l), &mut grad_weights[s..s + area]);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Bias of each output block broadcast over its orbit channels.
fn channel_bias<T: Real>(spec: &GConvSpec, bias: &[T], channel: usize) -> T {
    bias[channel / spec.out_type.rep.dim()]
}

pub(crate) fn conv_shape(spec: &GConvSpec, h: usize, w: usize) -> ConvShape {
    ConvShape {
        cin: spec.in_type.channels(),
        cout: spec.out_type.channels(),
        h,
        w,
        r: spec.kernel_size,
        pad: spec.padding(),
    }
}

/// "Same" correlation with the expanded kernel plus bias.
pub(crate) fn gconv_forward<T: Real>(
    spec: &GConvSpec,
    kernel: &Kernel<T>,
    bias: &[T],
    input: &FeatureField<T>,
) -> Result<FeatureField<T>> {
    if input.ftype() != spec.in_type {
        return Err(Error::Shape(format!("layer expects {}, got {}", spec.in_type, input.ftype())));
    }
    let shape = conv_shape(spec, input.height(), input.width());
    let mut out = FeatureField::zeros(spec.out_type, shape.out_h(), shape.out_w());
    for c in 0..out.channels() {
        let b = channel_bias(spec, bias, c);
        out.channel_mut(c).iter_mut().for_each(|v| *v = b);
    }
    correlate_forward(&shape, input.data(), kernel.data(), out.data_mut());
    Ok(out)
}

/// Returns (input gradient, expanded-kernel gradient, bias gradient).
pub(crate) fn gconv_backward<T: Real>(
    spec: &GConvSpec,
    kernel: &Kernel<T>,
    input: &FeatureField<T>,
    grad_out: &FeatureField<T>,
) -> Result<(FeatureField<T>, Kernel<T>, Vec<T>)> {
    let shape = conv_shape(spec, input.height(), input.width());
    let mut grad_in = FeatureField::zeros(input.ftype(), input.height(), input.width());
    correlate_backward_input(&shape, kernel.data(), grad_out.data(), grad_in.data_mut());
    let mut grad_k = Kernel::zeros(kernel.out_channels(), kernel.in_channels(), kernel.size())?;
    correlate_backward_kernel(&shape, input.data(), grad_out.data(), grad_k.data_mut());
    let mut grad_b = vec![T::zero(); spec.bias_len()];
    let dim = spec.out_type.rep.dim();
    for c in 0..grad_out.channels() {
        grad_b[c / dim] += grad_out.channel(c).iter().copied().sum::<T>();
    }
    Ok((grad_in, grad_k, grad_b))
}

/// A standalone group-convolution layer owning its parameters.
#[derive(Clone, Debug)]
pub struct GConvLayer<T> {
    pub spec: GConvSpec,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    plans: Vec<RotationPlan>,
}

impl<T: Real> GConvLayer<T> {
    pub fn new(spec: GConvSpec, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        spec.pairing()?;
        if weights.len() != spec.weight_len() || bias.len() != spec.bias_len() {
            return Err(Error::Shape("gconv parameter length".into()));
        }
        let plans = spec.plans()?;
        Ok(Self { spec, weights, bias, plans })
    }

    pub fn random(spec: GConvSpec, rng: &mut CounterRng) -> Result<Self> {
        let (w, b) = spec.init(rng);
        Self::new(spec, w, b)
    }

    pub fn expand(&self) -> Result<Kernel<T>> {
        expand_kernel(&self.spec, &self.plans, &self.weights)
    }

    pub fn forward(&self, input: &FeatureField<T>) -> Result<FeatureField<T>> {
        gconv_forward(&self.spec, &self.expand()?, &self.bias, input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::act;

    fn el(n: usize, i: i64) -> GroupElement {
        GroupElement::new(n, i).unwrap()
    }

    #[test]
    fn unit_filter_replicates_over_orbit() {
        let spec = GConvSpec::new(4, FieldType::trivial(4, 1).unwrap(), FieldType::regular(4, 1).unwrap(), 1);
        let layer = GConvLayer::new(spec, vec![0.7f64], vec![0.0]).unwrap();
        let k = layer.expand().unwrap();
        assert_eq!(k.data(), &[0.7, 0.7, 0.7, 0.7]);
    }

    #[test]
    fn corner_impulse_rotates_around_orbit() {
        let spec = GConvSpec::new(4, FieldType::trivial(4, 1).unwrap(), FieldType::regular(4, 1).unwrap(), 3);
        let mut w = vec![0.0f64; 9];
        w[0] = 1.0; // top-left
        let k = GConvLayer::new(spec, w, vec![0.0]).unwrap().expand().unwrap();
        // counterclockwise quarter turns move top-left -> bottom-left -> bottom-right -> top-right
        let hot: Vec<usize> = (0..4).map(|j| k.tap(j, 0).iter().position(|&v| v == 1.0).unwrap()).collect();
        assert_eq!(hot, vec![0, 6, 8, 2]);
        for j in 0..4 {
            assert_eq!(k.tap(j, 0).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn regular_to_trivial_is_unsupported() {
        let spec = GConvSpec::new(4, FieldType::regular(4, 1).unwrap(), FieldType::trivial(4, 1).unwrap(), 3);
        assert!(matches!(spec.pairing(), Err(Error::UnsupportedTypes(_))));
    }

    #[test]
    fn layer_is_equivariant_for_quarter_turns() {
        let mut rng = CounterRng::new(9, 0);
        for (tin, tout) in [
            (FieldType::trivial(4, 2).unwrap(), FieldType::regular(4, 2).unwrap()),
            (FieldType::regular(4, 2).unwrap(), FieldType::regular(4, 1).unwrap()),
            (FieldType::trivial(4, 1).unwrap(), FieldType::trivial(4, 2).unwrap()),
        ] {
            let layer = GConvLayer::<f64>::random(GConvSpec::new(4, tin, tout, 3), &mut rng).unwrap();
            let x = FeatureField::from_fn(tin, 8, 8, |_, _, _| rng.symmetric(1.0));
            for g in GroupElement::all(4).unwrap() {
                let lhs = layer.forward(&act(&g, &x).unwrap()).unwrap();
                let rhs = act(&g, &layer.forward(&x).unwrap()).unwrap();
                assert!(lhs.max_abs_diff(&rhs, None).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn untied_layer_breaks_equivariance() {
        let mut rng = CounterRng::new(10, 0);
        let mut spec = GConvSpec::new(4, FieldType::trivial(4, 1).unwrap(), FieldType::regular(4, 1).unwrap(), 3);
        spec.untied = true;
        let layer = GConvLayer::<f64>::random(spec, &mut rng).unwrap();
        let x = FeatureField::from_fn(FieldType::trivial(4, 1).unwrap(), 8, 8, |_, _, _| rng.symmetric(1.0));
        let g = el(4, 1);
        let lhs = layer.forward(&act(&g, &x).unwrap()).unwrap();
        let rhs = act(&g, &layer.forward(&x).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs, None).unwrap() > 1e-3);
    }
}
