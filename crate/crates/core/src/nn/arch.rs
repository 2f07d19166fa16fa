//! Network builders. Widths are channel counts; each regular block of a
//! `C_n` network spends `n` channels, so a width `w` becomes `w / n` regular
//! fields (at least one). With `n = 1` the builders produce plain CNNs.

use super::gconv::GConvSpec;
use super::network::{Layer, NetworkSpec};
use crate::error::{Error, Result};
use crate::field::FieldType;

fn regular(n: usize, width: usize) -> Result<FieldType> {
    FieldType::regular(n, (width / n).max(1))
}

fn conv(n: usize, from: FieldType, to: FieldType, kernel: usize) -> Layer {
    Layer::Gconv(GConvSpec::new(n, from, to, kernel))
}

/// Two-level U-Net: `conv×2 → pool → conv×2 → pool → conv×2 → up ⊕ skip → conv
/// → up ⊕ skip → conv → conv`, finishing with one regular field and group
/// pooling to a single invariant channel. Input sides must be divisible by 4.
pub fn unet(name: &str, n: usize, in_channels: usize, widths: [usize; 3], kernel: usize) -> Result<NetworkSpec> {
    let input = FieldType::trivial(n, in_channels)?;
    let [a, b, c] = [regular(n, widths[0])?, regular(n, widths[1])?, regular(n, widths[2])?];
    let cat = |x: FieldType, y: FieldType| FieldType::new(x.rep, x.multiplicity + y.multiplicity);
    let layers = vec![
        conv(n, input, a, kernel),
        Layer::Relu,
        conv(n, a, a, kernel),
        Layer::Relu,
        Layer::Save { slot: 0 },
        Layer::MaxPool2,
        conv(n, a, b, kernel),
        Layer::Relu,
        conv(n, b, b, kernel),
        Layer::Relu,
        Layer::Save { slot: 1 },
        Layer::MaxPool2,
        conv(n, b, c, kernel),
        Layer::Relu,
        conv(n, c, c, kernel),
        Layer::Relu,
        Layer::Upsample2,
        Layer::Concat { slot: 1 },
        conv(n, cat(c, b), b, kernel),
        Layer::Relu,
        Layer::Upsample2,
        Layer::Concat { slot: 0 },
        conv(n, cat(b, a), a, kernel),
        Layer::Relu,
        conv(n, a, FieldType::regular(n, 1)?, kernel),
        Layer::GroupPool,
    ];
    finish(name, input, layers)
}

/// Resolution-preserving stack of group convolutions ending in one invariant channel.
pub fn encoder(name: &str, n: usize, in_channels: usize, widths: &[usize], kernel: usize) -> Result<NetworkSpec> {
    let input = FieldType::trivial(n, in_channels)?;
    let mut layers = Vec::new();
    let mut cur = input;
    for &w in widths {
        let next = regular(n, w)?;
        layers.push(conv(n, cur, next, kernel));
        layers.push(Layer::Relu);
        cur = next;
    }
    layers.push(conv(n, cur, FieldType::regular(n, 1)?, kernel));
    layers.push(Layer::GroupPool);
    finish(name, input, layers)
}

/// Crop classifier whose output is one quotient `C_n / C_k` field: `n / k` logits.
pub fn angle_net(name: &str, n: usize, in_channels: usize, widths: &[usize], kernel: usize, k: usize) -> Result<NetworkSpec> {
    if n % k != 0 {
        return Err(Error::BadDivisor { n, k });
    }
    let input = FieldType::trivial(n, in_channels)?;
    let mut layers = Vec::new();
    let mut cur = input;
    for &w in widths {
        let next = regular(n, w)?;
        layers.push(conv(n, cur, next, kernel));
        layers.push(Layer::Relu);
        cur = next;
    }
    layers.push(conv(n, cur, FieldType::regular(n, 1)?, kernel));
    layers.push(Layer::SpatialMean);
    layers.push(Layer::QuotientPool { k });
    finish(name, input, layers)
}

fn finish(name: &str, input: FieldType, layers: Vec<Layer>) -> Result<NetworkSpec> {
    let spec = NetworkSpec {
        name: name.to_string(),
        input,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FeatureField;
    use crate::nn::Network;
    use crate::rng::CounterRng;

    #[test]
    fn unet_preserves_scene_shape() {
        let spec = unet("f_p", 4, 2, [8, 16, 32], 3).unwrap();
        let net = Network::<f32>::new(spec, &mut CounterRng::new(0, 0)).unwrap();
        let x = FeatureField::zeros(net.input_type(), 64, 64);
        let y = net.infer(&x).unwrap();
        assert_eq!((y.channels(), y.height(), y.width()), (1, 64, 64));
    }

    #[test]
    fn angle_net_emits_half_orbit() {
        let spec = angle_net("f_theta", 8, 2, &[8, 16], 3, 2).unwrap();
        let net = Network::<f64>::new(spec, &mut CounterRng::new(0, 0)).unwrap();
        let y = net.infer(&FeatureField::zeros(net.input_type(), 17, 17)).unwrap();
        assert_eq!((y.channels(), y.height(), y.width()), (4, 1, 1));
    }

    #[test]
    fn plain_networks_use_trivial_group() {
        let spec = encoder("psi", 1, 2, &[8, 8], 3).unwrap();
        let net = Network::<f64>::new(spec, &mut CounterRng::new(0, 0)).unwrap();
        assert_eq!(net.output_type().channels(), 1);
    }
}
