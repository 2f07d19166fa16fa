//! Behavior-cloning loop with periodic validation and best-checkpoint tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Checkpoint, TrainedNetwork};
use crate::ravens::{evaluate_policy, seeds, EvalReport, Task, TEST_OFFSET, VALIDATION_OFFSET};
use crate::rng::{streams, CounterRng};
use crate::transporter::{Demonstration, ModelConfig, Optimizers, StepLosses, Transporter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    /// Base seed: training scenes use `seed + i`, initialization and demo order derive from it too.
    pub seed: u64,
    pub demos: usize,
    pub steps: u64,
    pub lr: f64,
    pub eval_every: u64,
    pub val_episodes: usize,
    pub test_episodes: usize,
    /// Stop once a validation run reaches this success rate.
    #[serde(default)]
    pub stop_at: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: Task::InsertL,
            seed: 0,
            demos: 10,
            steps: 2000,
            lr: 1e-4,
            eval_every: 100,
            val_episodes: 20,
            test_episodes: 20,
            stop_at: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("demos", self.demos as u64),
            ("steps", self.steps),
            ("eval_every", self.eval_every),
            ("val_episodes", self.val_episodes as u64),
            ("test_episodes", self.test_episodes as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn validation_seeds(&self) -> Vec<u64> {
        seeds(self.seed, VALIDATION_OFFSET, self.val_episodes)
    }

    pub fn test_seeds(&self) -> Vec<u64> {
        seeds(self.seed, TEST_OFFSET, self.test_episodes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    #[serde(flatten)]
    pub losses: StepLosses,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: u64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainMeta {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    curve: Vec<ValidationPoint>,
    best: Option<ValidationPoint>,
}

/// Model, optimizer and bookkeeping of one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Transporter<f32>,
    pub opt: Optimizers<f32>,
    pub step: u64,
    pub curve: Vec<ValidationPoint>,
    pub best: Option<ValidationPoint>,
    best_state: Option<(Transporter<f32>, Optimizers<f32>)>,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Transporter::new(model, config.seed)?;
        let opt = Optimizers::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            &model,
        );
        Ok(Self {
            config,
            model,
            opt,
            step: 0,
            curve: Vec::new(),
            best: None,
            best_state: None,
        })
    }

    /// Demonstration used at `step`: epochs walk the dataset in an order drawn
    /// from a per-epoch counter stream, so any step is addressable directly.
    pub fn demo_index(&self, step: u64, count: usize) -> usize {
        let epoch = step / count as u64;
        let order = CounterRng::new(self.config.seed, streams::ORDER + (epoch << 8)).permutation(count);
        order[(step % count as u64) as usize]
    }

    pub fn train_step(&mut self, demos: &[Demonstration]) -> Result<StepLosses> {
        if demos.is_empty() {
            return Err(Error::Config("no demonstrations".into()));
        }
        let demo = &demos[self.demo_index(self.step, demos.len())];
        let losses = self.model.training_step(&mut self.opt, demo)?;
        self.step += 1;
        Ok(losses)
    }

    pub fn evaluate(model: &Transporter<f32>, task: Task, seeds: &[u64]) -> Result<EvalReport> {
        evaluate_policy(task, seeds, |obs, _| model.act(obs))
    }

    /// Validation success rate of the current parameters; updates the best state.
    pub fn validate(&mut self) -> Result<ValidationPoint> {
        let report = Self::evaluate(&self.model, self.config.task, &self.config.validation_seeds())?;
        let point = ValidationPoint {
            step: self.step,
            success_rate: report.success_rate,
        };
        self.curve.push(point);
        if self.best.map_or(true, |b| point.success_rate > b.success_rate) {
            self.best = Some(point);
            self.best_state = Some((self.model.clone(), self.opt.clone()));
        }
        Ok(point)
    }

    /// Trains until the step budget is spent (or `stop_at` is reached),
    /// validating every `eval_every` steps. `on_loss` sees every step.
    pub fn run(&mut self, demos: &[Demonstration], mut on_loss: impl FnMut(&LossRow), mut on_val: impl FnMut(&ValidationPoint)) -> Result<()> {
        while self.step < self.config.steps {
            let losses = self.train_step(demos)?;
            on_loss(&LossRow { step: self.step, losses });
            if self.step % self.config.eval_every == 0 || self.step == self.config.steps {
                let p = self.validate()?;
                on_val(&p);
                if self.config.stop_at.is_some_and(|t| p.success_rate >= t) {
                    break;
                }
            }
        }
        Ok(())
    }

    /// Best validated model so far, or the current one before any validation.
    pub fn best_model(&self) -> &Transporter<f32> {
        self.best_state.as_ref().map_or(&self.model, |(m, _)| m)
    }

    /// First validation step whose success rate reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<usize> {
        self.curve.iter().position(|p| p.success_rate >= threshold).map(|i| i + 1)
    }

    fn checkpoint_of(&self, model: &Transporter<f32>, opt: &Optimizers<f32>, step: u64) -> Result<Checkpoint> {
        let meta = TrainMeta {
            model: model.config.clone(),
            train: self.config.clone(),
            step,
            curve: self.curve.clone(),
            best: self.best,
        };
        let adams = [&opt.pick, &opt.pick_angle, &opt.place_crop, &opt.place_scene];
        let networks = model
            .networks()
            .into_iter()
            .zip(adams)
            .map(|((role, net), adam)| TrainedNetwork {
                role: role.to_string(),
                net: net.clone(),
                adam: adam.clone(),
            })
            .collect();
        Ok(Checkpoint {
            networks,
            meta: serde_json::to_value(meta)?,
        })
    }

    /// Current state, for resuming.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.checkpoint_of(&self.model, &self.opt, self.step)
    }

    /// Best validated state (falls back to the current state).
    pub fn best_checkpoint(&self) -> Result<Checkpoint> {
        match &self.best_state {
            Some((m, o)) => self.checkpoint_of(m, o, self.best.map_or(self.step, |b| b.step)),
            None => self.checkpoint(),
        }
    }

    /// Resumes a run. The validation curve is kept; the best state is only
    /// carried over when the checkpoint is itself the best validated state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: TrainMeta = serde_json::from_value(ckpt.meta.clone())?;
        let (model, opt) = model_from_checkpoint(ckpt)?;
        let is_best = meta.best.is_some_and(|b| b.step == meta.step);
        Ok(Self {
            config: meta.train,
            best: if is_best { meta.best } else { None },
            best_state: is_best.then(|| (model.clone(), opt.clone())),
            model,
            opt,
            step: meta.step,
            curve: meta.curve,
        })
    }

    /// Reinstates the best state of a resumed run from its best checkpoint.
    /// Returns `false`, leaving the trainer untouched, when `ckpt` is not the
    /// best state recorded on this run's validation curve.
    pub fn restore_best(&mut self, ckpt: &Checkpoint) -> Result<bool> {
        let meta: TrainMeta = serde_json::from_value(ckpt.meta.clone())?;
        let Some(best) = meta.best else {
            return Ok(false);
        };
        let same_run = meta.model == self.model.config
            && meta.train.task == self.config.task
            && meta.train.seed == self.config.seed
            && meta.train.lr == self.config.lr
            && meta.train.eval_every == self.config.eval_every
            && meta.train.val_episodes == self.config.val_episodes;
        let on_curve = best.step == meta.step
            && self.curve.starts_with(&meta.curve)
            && self.curve.contains(&best)
            && self.best.is_none_or(|b| b == best);
        if !(same_run && on_curve) {
            return Ok(false);
        }
        self.best = Some(best);
        self.best_state = Some(model_from_checkpoint(ckpt)?);
        Ok(true)
    }
}

/// Training configuration recorded in a checkpoint.
pub fn train_config_of(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let train = ckpt
        .meta
        .get("train")
        .cloned()
        .ok_or_else(|| Error::Format("checkpoint lacks a training configuration".into()))?;
    Ok(serde_json::from_value(train)?)
}

/// Restores the four networks, their optimizers and the model configuration.
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<(Transporter<f32>, Optimizers<f32>)> {
    let config: ModelConfig = serde_json::from_value(
        ckpt.meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Format("checkpoint lacks a model configuration".into()))?,
    )?;
    let get = |role: &str| ckpt.get(role).cloned();
    let (a, b, c, d) = (get("pick")?, get("pick_angle")?, get("place_crop")?, get("place_scene")?);
    let expected = config.specs()?;
    for (spec, t) in expected.iter().zip([&a, &b, &c, &d]) {
        if spec != t.net.spec() {
            return Err(Error::Format(format!("network {} does not match the model configuration", t.role)));
        }
    }
    Ok((
        Transporter {
            config,
            pick: a.net,
            pick_angle: b.net,
            place_crop: c.net,
            place_scene: d.net,
        },
        Optimizers {
            pick: a.adam,
            pick_angle: b.adam,
            place_crop: c.adam,
            place_scene: d.adam,
        },
    ))
}
