use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, NetError, Network, Tensor};
use crate::classes::NUM_CLASSES;
use crate::events::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Multiplier on the Glorot bound when initializing.
    pub init_scale: f64,
    /// Learning-rate multiplier applied from two thirds of the epochs on.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            init_scale: 1.0,
            lr_decay: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Shape(format!("train config: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be a finite non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.init_scale > 0.0) {
            return bad("init scale must be positive");
        }
        Ok(())
    }

    /// Learning rate for a given epoch under the step schedule.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= (2 * self.epochs).div_ceil(3) {
            self.learning_rate * self.lr_decay
        } else {
            self.learning_rate
        }
    }
}

/// One training example: centered input tensor, class index and the target
/// distribution (one-hot unless a soft target was supplied).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor,
    pub label: usize,
    pub target: [f64; NUM_CLASSES],
}

impl Sample {
    pub fn hard(frame: &Frame, label: usize) -> Self {
        assert!(label < NUM_CLASSES, "label {label} out of range");
        let mut target = [0.0; NUM_CLASSES];
        target[label] = 1.0;
        Self {
            input: Tensor::from_frame(frame),
            label,
            target,
        }
    }

    pub fn soft(frame: &Frame, label: usize, target: [f64; NUM_CLASSES]) -> Self {
        assert!(label < NUM_CLASSES, "label {label} out of range");
        Self {
            input: Tensor::from_frame(frame),
            label,
            target,
        }
    }
}

/// Momentum SGD state: v = mu v + lr g, w -= v.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    velocity: Gradients,
    batch_grad: Gradients,
    lr: f64,
    steps: u64,
}

impl Trainer {
    pub fn new(net: &Network, config: TrainConfig) -> Result<Self, NetError> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: Gradients::zeros_like(net),
            batch_grad: Gradients::zeros_like(net),
            lr: config.learning_rate,
            steps: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update on a batch of frames with class indices; returns the mean
    /// cross-entropy before the update.
    pub fn train_step(&mut self, net: &mut Network, batch: &[(Frame, usize)]) -> Result<f64, NetError> {
        let samples: Vec<Sample> = batch
            .iter()
            .map(|(f, label)| {
                if *label >= NUM_CLASSES {
                    Err(NetError::Shape(format!("label {label} out of range")))
                } else {
                    Ok(Sample::hard(f, *label))
                }
            })
            .collect::<Result<_, _>>()?;
        let refs: Vec<&Sample> = samples.iter().collect();
        self.train_step_samples(net, &refs)
    }

    /// One update on prepared samples (hard or soft targets).
    pub fn train_step_samples(&mut self, net: &mut Network, batch: &[&Sample]) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Err(NetError::Shape("empty batch".into()));
        }
        for g in self.batch_grad.layers.iter_mut().flatten() {
            g.weights.fill(0.0);
            g.bias.fill(0.0);
        }
        let mut loss = 0.0;
        for s in batch {
            loss += net.accumulate_gradients(&s.input, &s.target, &mut self.batch_grad)?.0;
        }
        let loss = loss / batch.len() as f64;
        if !loss.is_finite() {
            return Err(NetError::Divergence(loss));
        }
        let scale = self.lr / batch.len() as f64;
        let mu = self.config.momentum;
        for ((w, b), (v, g)) in net.params_mut().zip(
            self.velocity
                .layers
                .iter_mut()
                .flatten()
                .zip(self.batch_grad.layers.iter().flatten()),
        ) {
            for ((w, v), g) in w.iter_mut().zip(&mut v.weights).zip(&g.weights) {
                *v = mu * *v + scale * g;
                *w -= *v;
            }
            for ((b, v), g) in b.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                *v = mu * *v + scale * g;
                *b -= *v;
            }
        }
        self.steps += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
}

/// Train for `config.epochs` passes over `samples`, reshuffling each epoch
/// from the seeded RNG. Initialization is the caller's business.
pub fn fit(
    net: &mut Network,
    samples: &[Sample],
    config: TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, NetError> {
    let mut trainer = Trainer::new(net, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        trainer.set_learning_rate(config.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            total += trainer.train_step_samples(net, &batch)? * batch.len() as f64;
            n += batch.len();
        }
        let stats = EpochStats {
            epoch,
            learning_rate: trainer.learning_rate(),
            mean_loss: if n > 0 { total / n as f64 } else { 0.0 },
        };
        on_epoch(&stats);
        epochs.push(stats);
    }
    Ok(TrainReport {
        epochs,
        steps: trainer.steps(),
    })
}

/// Fraction of samples whose argmax output equals the label.
pub fn evaluate(net: &Network, samples: &[Sample]) -> Result<f64, NetError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        let out = net.forward_tensor(&s.input)?;
        let best = out
            .data()
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v > out.data()[b] { i } else { b });
        correct += usize::from(best == s.label);
    }
    Ok(correct as f64 / samples.len() as f64)
}
