use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::gconv::{expand_kernel, expand_kernel_backward, gconv_backward, gconv_forward, GConvSpec};
use crate::error::{shape_err, Error, Result};
use crate::field::{FeatureField, FieldType, Kernel, RotationPlan};
use crate::group::{RepKind, Representation};
use crate::real::Real;
use crate::rng::CounterRng;

/// One step of a network. `Save`/`Concat` implement skip connections through
/// numbered slots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    Gconv(GConvSpec),
    Relu,
    MaxPool2,
    Upsample2,
    Save { slot: usize },
    Concat { slot: usize },
    /// Regular → trivial: mean over each orbit.
    GroupPool,
    /// Regular `C_n` → quotient `C_n/C_k`: mean over each coset.
    QuotientPool { k: usize },
    /// Global spatial mean, `H × W → 1 × 1`.
    SpatialMean,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: FieldType,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Checks that adjacent layer types compose and returns the output type.
    pub fn validate(&self) -> Result<FieldType> {
        let mut cur = self.input;
        let mut slots: Vec<Option<FieldType>> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::Network(format!("{} layer {i}: {msg}", self.name));
            cur = match layer {
                Layer::Gconv(spec) => {
                    spec.pairing()?;
                    if spec.in_type != cur {
                        return Err(err(format!("expects {}, receives {}", spec.in_type, cur)));
                    }
                    spec.out_type
                }
                Layer::Relu | Layer::MaxPool2 | Layer::Upsample2 | Layer::SpatialMean => {
                    if matches!(layer, Layer::Relu) && !cur.rep.is_permutation() {
                        return Err(err(format!("pointwise ReLU is not equivariant on {cur}")));
                    }
                    cur
                }
                Layer::Save { slot } => {
                    if slots.len() <= *slot {
                        slots.resize(slot + 1, None);
                    }
                    slots[*slot] = Some(cur);
                    cur
                }
                Layer::Concat { slot } => {
                    let saved = slots
                        .get(*slot)
                        .copied()
                        .flatten()
                        .ok_or_else(|| err(format!("slot {slot} is empty")))?;
                    if saved.rep != cur.rep {
                        return Err(err(format!("cannot concat {cur} with {saved}")));
                    }
                    FieldType::new(cur.rep, cur.multiplicity + saved.multiplicity)
                }
                Layer::GroupPool => {
                    if cur.rep.kind != RepKind::Regular {
                        return Err(err(format!("group pool needs a regular field, got {cur}")));
                    }
                    FieldType::new(Representation::trivial(cur.rep.n)?, cur.multiplicity)
                }
                Layer::QuotientPool { k } => {
                    if cur.rep.kind != RepKind::Regular {
                        return Err(err(format!("quotient pool needs a regular field, got {cur}")));
                    }
                    FieldType::new(Representation::quotient(cur.rep.n, *k)?, cur.multiplicity)
                }
            };
        }
        Ok(cur)
    }

    /// `(name, length)` of every parameter array in declaration order.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Layer::Gconv(spec) = layer {
                out.push((format!("{}.{i}.weight", self.name), spec.weight_len()));
                out.push((format!("{}.{i}.bias", self.name), spec.bias_len()));
            }
        }
        out
    }

    /// Sets the debug "untied kernel" mutation on every group convolution.
    pub fn untied(mut self) -> Self {
        for layer in &mut self.layers {
            if let Layer::Gconv(spec) = layer {
                spec.untied = true;
            }
        }
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// A network specification with its parameters.
#[derive(Debug)]
pub struct Network<T> {
    spec: NetworkSpec,
    output: FieldType,
    params: Vec<Vec<T>>,
    /// Per layer: index of the weight parameter and the kernel rotation plans.
    gconv: Vec<Option<(usize, Vec<RotationPlan>)>>,
    id: u64,
    version: u64,
}

impl<T: Real> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            output: self.output,
            params: self.params.clone(),
            gconv: self.gconv.clone(),
            id: fresh_id(),
            version: 0,
        }
    }
}

/// Activations recorded by [`Network::forward`] for the backward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    net: (u64, u64),
    inputs: Vec<FeatureField<T>>,
    kernels: Vec<Option<Kernel<T>>>,
    pool_index: Vec<Option<Vec<u32>>>,
}

/// Parameter gradients in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            params: net.params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .fold(0.0f64, |m, &v| m.max(v.abs().f64()))
    }
}

impl<T: Real> Network<T> {
    /// Parameters drawn from `rng` (see [`GConvSpec::init`]).
    pub fn new(spec: NetworkSpec, rng: &mut CounterRng) -> Result<Self> {
        let mut params = Vec::new();
        for layer in &spec.layers {
            if let Layer::Gconv(g) = layer {
                let (w, b) = g.init::<T>(rng);
                params.push(w);
                params.push(b);
            }
        }
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<Vec<T>>) -> Result<Self> {
        let output = spec.validate()?;
        let layout = spec.param_layout();
        if layout.len() != params.len() || layout.iter().zip(&params).any(|((_, len), p)| *len != p.len()) {
            return Err(Error::Network(format!("{}: parameter arrays do not match the layout", spec.name)));
        }
        let mut gconv = Vec::with_capacity(spec.layers.len());
        let mut next = 0;
        for layer in &spec.layers {
            gconv.push(match layer {
                Layer::Gconv(g) => {
                    let entry = (next, g.plans()?);
                    next += 2;
                    Some(entry)
                }
                _ => None,
            });
        }
        Ok(Self {
            spec,
            output,
            params,
            gconv,
            id: fresh_id(),
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_type(&self) -> FieldType {
        self.spec.input
    }

    pub fn output_type(&self) -> FieldType {
        self.output
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        self.version += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let params = self
            .params
            .iter()
            .map(|p| p.iter().map(|&v| U::of(v.f64())).collect())
            .collect();
        Network::from_params(self.spec.clone(), params).expect("same layout")
    }

    /// Expanded kernel of the group convolution at `layer`.
    pub fn kernel(&self, layer: usize) -> Result<Kernel<T>> {
        match (&self.spec.layers.get(layer), &self.gconv.get(layer)) {
            (Some(Layer::Gconv(spec)), Some(Some((p, plans)))) => expand_kernel(spec, plans, &self.params[*p]),
            _ => Err(Error::Network(format!("layer {layer} is not a group convolution"))),
        }
    }

    pub fn infer(&self, input: &FeatureField<T>) -> Result<FeatureField<T>> {
        self.forward(input).map(|(out, _)| out)
    }

    pub fn forward(&self, input: &FeatureField<T>) -> Result<(FeatureField<T>, ForwardCache<T>)> {
        if input.ftype() != self.spec.input {
            return Err(Error::Shape(format!(
                "{} expects {}, got {}",
                self.spec.name,
                self.spec.input,
                input.ftype()
            )));
        }
        let count = self.spec.layers.len();
        let mut cache = ForwardCache {
            net: (self.id, self.version),
            inputs: Vec::with_capacity(count),
            kernels: Vec::with_capacity(count),
            pool_index: Vec::with_capacity(count),
        };
        let mut slots: Vec<Option<FeatureField<T>>> = Vec::new();
        let mut cur = input.clone();
        for (li, layer) in self.spec.layers.iter().enumerate() {
            let mut kernel = None;
            let mut pool = None;
            let next = match layer {
                Layer::Gconv(spec) => {
                    let (p, plans) = self.gconv[li].as_ref().expect("gconv entry");
                    let k = expand_kernel(spec, plans, &self.params[*p])?;
                    let out = gconv_forward(spec, &k, &self.params[p + 1], &cur)?;
                    kernel = Some(k);
                    out
                }
                Layer::Relu => cur.map(|v| if v > T::zero() { v } else { T::zero() }),
                Layer::MaxPool2 => {
                    let (out, idx) = max_pool2(&cur)?;
                    pool = Some(idx);
                    out
                }
                Layer::Upsample2 => upsample2(&cur),
                Layer::Save { slot } => {
                    if slots.len() <= *slot {
                        slots.resize(slot + 1, None);
                    }
                    slots[*slot] = Some(cur.clone());
                    cur.clone()
                }
                Layer::Concat { slot } => {
                    let saved = slots[*slot].as_ref().expect("validated slot");
                    if saved.height() != cur.height() || saved.width() != cur.width() {
                        return shape_err(format!(
                            "{} layer {li}: skip {}x{} vs {}x{}",
                            self.spec.name,
                            saved.height(),
                            saved.width(),
                            cur.height(),
                            cur.width()
                        ));
                    }
                    cur.concat(saved)?
                }
                Layer::GroupPool => orbit_mean(&cur, cur.rep().n, 1)?,
                Layer::QuotientPool { k } => orbit_mean(&cur, cur.rep().n, *k)?,
                Layer::SpatialMean => spatial_mean(&cur),
            };
            cache.inputs.push(std::mem::replace(&mut cur, next));
            cache.kernels.push(kernel);
            cache.pool_index.push(pool);
        }
        Ok((cur, cache))
    }

    /// Gradients of the parameters and of the input given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &FeatureField<T>) -> Result<(Gradients<T>, FeatureField<T>)> {
        if cache.net != (self.id, self.version) || cache.inputs.len() != self.spec.layers.len() {
            return Err(Error::CacheMismatch);
        }
        let mut grads = Gradients::zeros_like(self);
        let mut slot_grads: Vec<Option<FeatureField<T>>> = Vec::new();
        let mut g = grad_out.clone();
        for (li, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &cache.inputs[li];
            g = match layer {
                Layer::Gconv(spec) => {
                    let (p, plans) = self.gconv[li].as_ref().expect("gconv entry");
                    let kernel = cache.kernels[li].as_ref().ok_or(Error::CacheMismatch)?;
                    let (gin, gk, gb) = gconv_backward(spec, kernel, input, &g)?;
                    expand_kernel_backward(spec, plans, &gk, &mut grads.params[*p])?;
                    for (d, v) in grads.params[p + 1].iter_mut().zip(gb) {
                        *d += v;
                    }
                    gin
                }
                Layer::Relu => {
                    let mut out = g.clone();
                    for (d, &x) in out.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    out
                }
                Layer::MaxPool2 => {
                    let idx = cache.pool_index[li].as_ref().ok_or(Error::CacheMismatch)?;
                    max_pool2_backward(input, idx, &g)
                }
                Layer::Upsample2 => upsample2_backward(input, &g),
                Layer::Save { slot } => {
                    let mut out = g.clone();
                    if let Some(Some(sg)) = slot_grads.get_mut(*slot).map(Option::take) {
                        out.add_assign(&sg)?;
                    }
                    out
                }
                Layer::Concat { slot } => {
                    let split = input.data().len();
                    let head = FeatureField::new(input.ftype(), input.height(), input.width(), g.data()[..split].to_vec())?;
                    let rest_type = FieldType::new(
                        input.rep(),
                        g.ftype().multiplicity - input.ftype().multiplicity,
                    );
                    let tail = FeatureField::new(rest_type, input.height(), input.width(), g.data()[split..].to_vec())?;
                    if slot_grads.len() <= *slot {
                        slot_grads.resize(slot + 1, None);
                    }
                    match &mut slot_grads[*slot] {
                        Some(acc) => acc.add_assign(&tail)?,
                        empty => *empty = Some(tail),
                    }
                    head
                }
                Layer::GroupPool => orbit_mean_backward(input, input.rep().n, 1, &g),
                Layer::QuotientPool { k } => orbit_mean_backward(input, input.rep().n, *k, &g),
                Layer::SpatialMean => spatial_mean_backward(input, &g),
            };
        }
        Ok((grads, g))
    }
}

fn max_pool2<T: Real>(x: &FeatureField<T>) -> Result<(FeatureField<T>, Vec<u32>)> {
    if x.height() % 2 != 0 || x.width() % 2 != 0 {
        return shape_err(format!("max pool needs even sizes, got {}x{}", x.height(), x.width()));
    }
    let (h, w) = (x.height() / 2, x.width() / 2);
    let mut out = FeatureField::zeros(x.ftype(), h, w);
    let mut idx = vec![0u32; x.channels() * h * w];
    for c in 0..x.channels() {
        let src = x.channel(c);
        for r in 0..h {
            for col in 0..w {
                let cands = [
                    2 * r * x.width() + 2 * col,
                    2 * r * x.width() + 2 * col + 1,
                    (2 * r + 1) * x.width() + 2 * col,
                    (2 * r + 1) * x.width() + 2 * col + 1,
                ];
                let mut best = cands[0];
                for &k in &cands[1..] {
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                out.set(c, r, col, src[best]);
                idx[(c * h + r) * w + col] = best as u32;
            }
        }
    }
    Ok((out, idx))
}

fn max_pool2_backward<T: Real>(input: &FeatureField<T>, idx: &[u32], g: &FeatureField<T>) -> FeatureField<T> {
    let mut out = FeatureField::zeros(input.ftype(), input.height(), input.width());
    let plane = g.plane();
    for c in 0..g.channels() {
        let gc = g.channel(c);
        let dst = out.channel_mut(c);
        for p in 0..plane {
            dst[idx[c * plane + p] as usize] += gc[p];
        }
    }
    out
}

fn upsample2<T: Real>(x: &FeatureField<T>) -> FeatureField<T> {
    let (h, w) = (x.height() * 2, x.width() * 2);
    FeatureField::from_fn(x.ftype(), h, w, |c, r, col| x.get(c, r / 2, col / 2))
}

fn upsample2_backward<T: Real>(input: &FeatureField<T>, g: &FeatureField<T>) -> FeatureField<T> {
    let mut out = FeatureField::zeros(input.ftype(), input.height(), input.width());
    for c in 0..g.channels() {
        for r in 0..g.height() {
            for col in 0..g.width() {
                let v = out.get(c, r / 2, col / 2) + g.get(c, r, col);
                out.set(c, r / 2, col / 2, v);
            }
        }
    }
    out
}

/// Mean over the `k` coset members of each quotient coordinate (`k = n` gives group pooling).
fn orbit_mean<T: Real>(x: &FeatureField<T>, n: usize, k: usize) -> Result<FeatureField<T>> {
    let d = n / k;
    let rep = if k == 1 {
        Representation::trivial(n)?
    } else {
        Representation::quotient(n, k)?
    };
    // k == 1 denotes the full orbit (group pooling); otherwise cosets of C_k.
    let (members, dim) = if k == 1 { (n, 1) } else { (k, d) };
    let ftype = FieldType::new(rep, x.ftype().multiplicity);
    let mut out = FeatureField::zeros(ftype, x.height(), x.width());
    let scale = T::of(1.0 / members as f64);
    for b in 0..x.ftype().multiplicity {
        for j in 0..dim {
            let dst = b * dim + j;
            for t in 0..members {
                let src = b * n + j + t * dim;
                let plane: Vec<T> = x.channel(src).to_vec();
                for (o, v) in out.channel_mut(dst).iter_mut().zip(plane) {
                    *o += scale * v;
                }
            }
        }
    }
    Ok(out)
}

fn orbit_mean_backward<T: Real>(input: &FeatureField<T>, n: usize, k: usize, g: &FeatureField<T>) -> FeatureField<T> {
    let (members, dim) = if k == 1 { (n, 1) } else { (k, n / k) };
    let scale = T::of(1.0 / members as f64);
    let mut out = FeatureField::zeros(input.ftype(), input.height(), input.width());
    for b in 0..input.ftype().multiplicity {
        for j in 0..dim {
            let src: Vec<T> = g.channel(b * dim + j).iter().map(|&v| v * scale).collect();
            for t in 0..members {
                out.channel_mut(b * n + j + t * dim).copy_from_slice(&src);
            }
        }
    }
    out
}

fn spatial_mean<T: Real>(x: &FeatureField<T>) -> FeatureField<T> {
    let scale = T::of(1.0 / x.plane() as f64);
    let data = (0..x.channels())
        .map(|c| x.channel(c).iter().copied().sum::<T>() * scale)
        .collect();
    FeatureField::new(x.ftype(), 1, 1, data).expect("one value per channel")
}

fn spatial_mean_backward<T: Real>(input: &FeatureField<T>, g: &FeatureField<T>) -> FeatureField<T> {
    let scale = T::of(1.0 / input.plane() as f64);
    let mut out = FeatureField::zeros(input.ftype(), input.height(), input.width());
    for c in 0..input.channels() {
        let v = g.data()[c] * scale;
        out.channel_mut(c).iter_mut().for_each(|d| *d = v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::act;
    use crate::group::GroupElement;

    fn plain_1x1(n: usize) -> NetworkSpec {
        let t = FieldType::trivial(n, 1).unwrap();
        NetworkSpec {
            name: "id".into(),
            input: t,
            layers: vec![Layer::Gconv(GConvSpec::new(n, t, t, 1))],
        }
    }

    #[test]
    fn identity_conv_passes_input_through() {
        let net = Network::<f64>::from_params(plain_1x1(4), vec![vec![1.0], vec![0.0]]).unwrap();
        let x = FeatureField::from_fn(FieldType::trivial(4, 1).unwrap(), 4, 4, |_, r, c| (r * 4 + c) as f64 - 3.0);
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let t = FieldType::trivial(4, 2).unwrap();
        let r = FieldType::regular(4, 1).unwrap();
        let spec = NetworkSpec {
            name: "z".into(),
            input: t,
            layers: vec![
                Layer::Gconv(GConvSpec::new(4, t, r, 3)),
                Layer::Gconv(GConvSpec::new(4, r, r, 3)),
                Layer::GroupPool,
            ],
        };
        let params = spec.param_layout().iter().map(|(_, len)| vec![0.0f64; *len]).collect();
        let net = Network::from_params(spec, params).unwrap();
        let x = FeatureField::from_fn(t, 6, 6, |c, r, col| (c + r * col) as f64);
        assert!(net.infer(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composition_errors_are_reported() {
        let t = FieldType::trivial(4, 1).unwrap();
        let r = FieldType::regular(4, 1).unwrap();
        let bad = NetworkSpec {
            name: "bad".into(),
            input: t,
            layers: vec![Layer::Gconv(GConvSpec::new(4, r, r, 3))],
        };
        assert!(matches!(bad.validate(), Err(Error::Network(_))));
        let empty_slot = NetworkSpec {
            name: "bad".into(),
            input: t,
            layers: vec![Layer::Concat { slot: 0 }],
        };
        assert!(empty_slot.validate().is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::<f64>::from_params(plain_1x1(1), vec![vec![2.0], vec![0.0]]).unwrap();
        let x = FeatureField::from_fn(FieldType::trivial(1, 1).unwrap(), 2, 2, |_, _, _| 1.0);
        let (y, cache) = net.forward(&x).unwrap();
        net.params_mut()[0][0] = 3.0;
        assert!(matches!(net.backward(&cache, &y), Err(Error::CacheMismatch)));
        let other = net.clone();
        let (_, cache) = net.forward(&x).unwrap();
        assert!(matches!(other.backward(&cache, &y), Err(Error::CacheMismatch)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let t = FieldType::trivial(4, 1).unwrap();
        let r = FieldType::regular(4, 1).unwrap();
        let spec = NetworkSpec {
            name: "g".into(),
            input: t,
            layers: vec![Layer::Gconv(GConvSpec::new(4, t, r, 3)), Layer::Relu, Layer::GroupPool],
        };
        let net = Network::<f64>::new(spec, &mut CounterRng::new(1, 0)).unwrap();
        let x = FeatureField::from_fn(t, 4, 4, |_, r, c| (r as f64 - c as f64) * 0.3);
        let (y, cache) = net.forward(&x).unwrap();
        let zero = FeatureField::zeros(y.ftype(), y.height(), y.width());
        let (g, gin) = net.backward(&cache, &zero).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert_eq!(gin.max_abs(), 0.0);
    }

    #[test]
    fn pool_and_upsample_commute_with_quarter_turns() {
        let t = FieldType::regular(4, 1).unwrap();
        let mut rng = CounterRng::new(4, 0);
        let x = FeatureField::from_fn(t, 8, 8, |_, _, _| rng.symmetric(1.0));
        let g = GroupElement::new(4, 1).unwrap();
        let (a, _) = max_pool2(&act(&g, &x).unwrap()).unwrap();
        let b = act(&g, &max_pool2(&x).unwrap().0).unwrap();
        assert_eq!(a, b);
        assert_eq!(upsample2(&act(&g, &x).unwrap()), act(&g, &upsample2(&x)).unwrap());
        let relu = |f: &FeatureField<f64>| f.map(|v| v.max(0.0));
        assert_eq!(relu(&act(&g, &x).unwrap()), act(&g, &relu(&x)).unwrap());
    }

    #[test]
    fn quotient_pool_pairs_opposite_channels() {
        let t = FieldType::regular(4, 1).unwrap();
        let x = FeatureField::<f64>::from_fn(t, 1, 1, |c, _, _| [1.0, 2.0, 5.0, 8.0][c]);
        let q = orbit_mean(&x, 4, 2).unwrap();
        assert_eq!(q.data(), &[3.0, 5.0]);
        assert_eq!(q.rep(), Representation::quotient(4, 2).unwrap());
        let gp = orbit_mean(&x, 4, 1).unwrap();
        assert_eq!(gp.data(), &[4.0]);
    }
}
