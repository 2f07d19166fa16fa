use serde::{Deserialize, Serialize};

use super::pick::{as_input, pick_angle, pick_position};
use super::place::{place_backward, place_forward, PlaceHead};
use super::{decode, pick_angle_label, pick_label, place_argmax, place_label, Demonstration, PickAction, PickMaps, PlaceAction, PlaceMap};
use crate::error::Result;
use crate::field::{crop, FeatureField};
use crate::nn::{arch, softmax_ce, AdamConfig, AdamState, Gradients, Network, NetworkSpec};
use crate::real::Real;
use crate::rng::{streams, CounterRng};

/// Sizes and widths of the four networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Rotation group order; the place head has `n` angle bins and the pick head `n/2`.
    pub n: usize,
    pub in_channels: usize,
    pub pick_crop: usize,
    pub place_crop: usize,
    pub kernel: usize,
    pub unet_widths: [usize; 3],
    pub crop_widths: Vec<usize>,
    pub angle_widths: Vec<usize>,
    pub place_head: PlaceHead,
    /// Debug mutation applied to every equivariant network.
    #[serde(default)]
    pub untied: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 8,
            in_channels: 2,
            pick_crop: 17,
            place_crop: 25,
            kernel: 3,
            unet_widths: [8, 16, 32],
            crop_widths: vec![16, 16],
            angle_widths: vec![16, 16],
            place_head: PlaceHead::Equivariant,
            untied: false,
        }
    }
}

impl ModelConfig {
    /// Zero padding added around the scene before the place correlation.
    pub fn pad(&self) -> usize {
        self.place_crop / 2
    }

    /// Specs of `(f_p, f_θ, ψ, φ)`.
    pub fn specs(&self) -> Result<[NetworkSpec; 4]> {
        let n = self.n;
        let place_n = match self.place_head {
            PlaceHead::Equivariant => n,
            PlaceHead::Baseline => 1,
        };
        let mut specs = [
            arch::unet("pick", n, self.in_channels, self.unet_widths, self.kernel)?,
            arch::angle_net("pick_angle", n, self.in_channels, &self.angle_widths, self.kernel, 2)?,
            arch::encoder("place_crop", place_n, self.in_channels, &self.crop_widths, self.kernel)?,
            arch::unet("place_scene", place_n, self.in_channels, self.unet_widths, self.kernel)?,
        ];
        if self.untied {
            specs = specs.map(NetworkSpec::untied);
        }
        Ok(specs)
    }
}

/// The four networks: `f_p`, `f_θ`, `ψ` and `φ`.
#[derive(Debug)]
pub struct Transporter<T> {
    pub config: ModelConfig,
    pub pick: Network<T>,
    pub pick_angle: Network<T>,
    pub place_crop: Network<T>,
    pub place_scene: Network<T>,
}

impl<T: Real> Clone for Transporter<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            pick: self.pick.clone(),
            pick_angle: self.pick_angle.clone(),
            place_crop: self.place_crop.clone(),
            place_scene: self.place_scene.clone(),
        }
    }
}

/// Gradients of all four networks from one demonstration.
#[derive(Clone, Debug)]
pub struct TransporterGrads<T> {
    pub pick: Gradients<T>,
    pub pick_angle: Gradients<T>,
    pub place_crop: Gradients<T>,
    pub place_scene: Gradients<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub pick: f64,
    pub angle: f64,
    pub place: f64,
}

/// One Adam state per network.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers<T> {
    pub pick: AdamState<T>,
    pub pick_angle: AdamState<T>,
    pub place_crop: AdamState<T>,
    pub place_scene: AdamState<T>,
}

impl<T: Real> Optimizers<T> {
    pub fn new(config: AdamConfig, model: &Transporter<T>) -> Self {
        Self {
            pick: AdamState::new(config, model.pick.params()),
            pick_angle: AdamState::new(config, model.pick_angle.params()),
            place_crop: AdamState::new(config, model.place_crop.params()),
            place_scene: AdamState::new(config, model.place_scene.params()),
        }
    }
}

impl<T: Real> Transporter<T> {
    /// Fresh parameters from the `INIT` stream of `seed`, drawn in the order
    /// `f_p, f_θ, ψ, φ`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let [a, b, c, d] = config.specs()?;
        let mut rng = CounterRng::new(seed, streams::INIT);
        Ok(Self {
            pick: Network::new(a, &mut rng)?,
            pick_angle: Network::new(b, &mut rng)?,
            place_crop: Network::new(c, &mut rng)?,
            place_scene: Network::new(d, &mut rng)?,
            config,
        })
    }

    pub fn networks(&self) -> [(&'static str, &Network<T>); 4] {
        [
            ("pick", &self.pick),
            ("pick_angle", &self.pick_angle),
            ("place_crop", &self.place_crop),
            ("place_scene", &self.place_scene),
        ]
    }

    fn place_logits(&self, obs: &FeatureField<T>, at: (usize, usize)) -> Result<FeatureField<T>> {
        let c = crop(obs, (at.0 as i64, at.1 as i64), self.config.place_crop)?;
        place_forward(self.config.place_head, &self.place_crop, &self.place_scene, &c, obs, self.config.n).map(|(o, _)| o)
    }

    /// Pick distributions, then the place distribution conditioned on the
    /// decoded pick pixel.
    pub fn maps(&self, obs: &FeatureField<T>) -> Result<(PickMaps<T>, PlaceMap<T>)> {
        let pos = pick_position(&self.pick, obs)?;
        let flat = pos.argmax();
        let at = (flat / obs.width(), flat % obs.width());
        let c = crop(obs, (at.0 as i64, at.1 as i64), self.config.pick_crop)?;
        let angle = pick_angle(&self.pick_angle, &c)?;
        let pick = PickMaps::from_logits(&pos, &angle)?;
        let place = PlaceMap::from_logits(&self.place_logits(obs, at)?)?;
        Ok((pick, place))
    }

    pub fn act(&self, obs: &FeatureField<T>) -> Result<(PickAction, PlaceAction)> {
        let (pick, place) = self.maps(obs)?;
        Ok(decode(&pick, &place))
    }

    /// Place decoded for a pick at pixel `at`, bypassing the pick networks.
    pub fn place_at(&self, obs: &FeatureField<T>, at: (usize, usize)) -> Result<PlaceAction> {
        let (j, u, v) = place_argmax(&self.place_logits(obs, at)?);
        Ok(PlaceAction {
            u,
            v,
            theta: 2.0 * std::f64::consts::PI * j as f64 / self.config.n as f64,
        })
    }

    /// Losses and gradients of the three cross-entropy terms on one demonstration.
    pub fn gradients(&self, demo: &Demonstration) -> Result<(StepLosses, TransporterGrads<T>)> {
        let obs: FeatureField<T> = demo.observation.cast();
        let (h, w) = (obs.height(), obs.width());
        let n = self.config.n;
        let at = (demo.pick.u as i64, demo.pick.v as i64);

        let pos_label = pick_label(&demo.pick, h, w)?;
        let (pos_out, pos_cache) = self.pick.forward(&as_input(&self.pick, &obs)?)?;
        let (pick_loss, g) = softmax_ce(pos_out.data(), pos_label)?;
        let g = FeatureField::new(pos_out.ftype(), h, w, g)?;
        let pick_grads = self.pick.backward(&pos_cache, &g)?.0;

        let angle_label = pick_angle_label(demo.pick.theta, n)?;
        let c = crop(&obs, at, self.config.pick_crop)?;
        let (ang_out, ang_cache) = self.pick_angle.forward(&as_input(&self.pick_angle, &c)?)?;
        let (angle_loss, g) = softmax_ce(ang_out.data(), angle_label)?;
        let g = FeatureField::new(ang_out.ftype(), 1, 1, g)?;
        let angle_grads = self.pick_angle.backward(&ang_cache, &g)?.0;

        let place_label = place_label(&demo.place, n, h, w)?;
        let c = crop(&obs, at, self.config.place_crop)?;
        let (logits, cache) = place_forward(self.config.place_head, &self.place_crop, &self.place_scene, &c, &obs, n)?;
        let (place_loss, g) = softmax_ce(logits.data(), place_label)?;
        let g = FeatureField::new(logits.ftype(), h, w, g)?;
        let (psi_grads, phi_grads) = place_backward(&self.place_crop, &self.place_scene, &cache, &g)?;

        Ok((
            StepLosses {
                pick: pick_loss.f64(),
                angle: angle_loss.f64(),
                place: place_loss.f64(),
            },
            TransporterGrads {
                pick: pick_grads,
                pick_angle: angle_grads,
                place_crop: psi_grads,
                place_scene: phi_grads,
            },
        ))
    }

    /// One Adam step for the pick-position net, one for the angle net, and one
    /// for the place pair `(ψ, φ)`.
    pub fn training_step(&mut self, opt: &mut Optimizers<T>, demo: &Demonstration) -> Result<StepLosses> {
        let (losses, g) = self.gradients(demo)?;
        opt.pick.step(self.pick.params_mut(), &g.pick.params)?;
        opt.pick_angle.step(self.pick_angle.params_mut(), &g.pick_angle.params)?;
        opt.place_crop.step(self.place_crop.params_mut(), &g.place_crop.params)?;
        opt.place_scene.step(self.place_scene.params_mut(), &g.place_scene.params)?;
        Ok(losses)
    }
}
