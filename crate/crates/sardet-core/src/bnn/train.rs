//! Variational training: minibatch ELBO with reparameterized gradients.
//!
//! Each step draws `mc_samples_per_step` noise samples shared across the
//! batch, runs one taped forward/backward pass per (sample, item), chains
//! the weight gradients back to `(mu, rho)` through the reparameterization,
//! adds the closed-form KL gradient, and applies SGD with momentum. The
//! whole trajectory is a pure function of the training seed.

use super::{sigmoid, softplus, BayesianModel};
use crate::error::{Error, Result};
use crate::seeds;
use crate::tape::{Mode, Tape};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// Per-layer standard-normal draws used by one reparameterized sample.
#[derive(Clone, Debug)]
pub struct EpsSample {
    /// `(weight eps, bias eps)` per parameterized layer.
    pub layers: Vec<(Tensor, Tensor)>,
}

impl EpsSample {
    /// All-zero noise: the deterministic `w = mu` sample.
    pub fn zeros_like(model: &BayesianModel) -> Self {
        EpsSample {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    (
                        Tensor::zeros(l.weight.mu.shape().to_vec()),
                        Tensor::zeros(l.bias.mu.shape().to_vec()),
                    )
                })
                .collect(),
        }
    }
}

/// Gradients of the training objective w.r.t. every variational parameter.
#[derive(Clone, Debug)]
pub struct GradientSet {
    /// `(d_w_mu, d_w_rho, d_b_mu, d_b_rho)` per parameterized layer.
    pub layers: Vec<[Tensor; 4]>,
}

impl GradientSet {
    fn zeros_like(model: &BayesianModel) -> Self {
        GradientSet {
            layers: model
                .layers()
                .iter()
                .map(|l| {
                    let w = l.weight.mu.shape().to_vec();
                    let b = l.bias.mu.shape().to_vec();
                    [
                        Tensor::zeros(w.clone()),
                        Tensor::zeros(w),
                        Tensor::zeros(b.clone()),
                        Tensor::zeros(b),
                    ]
                })
                .collect(),
        }
    }
}

/// Loss components of one step: mean NLL, KL, and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// How the KL term is weighted against the per-batch NLL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KlSchedule {
    /// `1 / batches_per_epoch`, the standard minibatch ELBO scaling.
    BatchScaled,
    /// A fixed weight; `Fixed(0.0)` reduces training to plain NLL descent.
    Fixed(f64),
    /// Linear ramp from 0 to `1 / batches_per_epoch` across the first epoch.
    WarmupFirstEpoch,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub kl_schedule: KlSchedule,
    pub mc_samples_per_step: usize,
    pub rng_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            kl_schedule: KlSchedule::BatchScaled,
            mc_samples_per_step: 1,
            rng_seed: 0,
        }
    }
}

impl TrainingConfig {
    fn check(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs as f64),
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate as f64),
            ("mc_samples_per_step", self.mc_samples_per_step as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParam {
                    name: "training config",
                    detail: format!("{name} must be positive, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Per-epoch training log row.
#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub nll: f64,
    pub kl: f64,
    pub total: f64,
    pub clean_accuracy: f64,
}

/// Computes the step objective and its gradients without updating the model.
///
/// The objective is `mean_{eps, item} nll + kl_weight * kl_to_prior`, with
/// the NLL averaged over every (noise sample, batch item) pair.
pub fn loss_and_gradients(
    model: &BayesianModel,
    batch: &[(&Tensor, usize)],
    eps_samples: &[EpsSample],
    kl_weight: f64,
) -> Result<(LossParts, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    if eps_samples.is_empty() {
        return Err(Error::EmptyInput("noise samples"));
    }
    for &(_, label) in batch {
        if label >= model.num_classes() {
            return Err(Error::OutOfBounds {
                what: "training label",
                detail: format!("label {label} with {} classes", model.num_classes()),
            });
        }
    }
    let mut grads = GradientSet::zeros_like(model);
    let inv = 1.0 / (batch.len() * eps_samples.len()) as f64;
    let seed = Tensor::from_vec(vec![inv as f32]);
    let mut nll_sum = 0.0f64;

    for eps in eps_samples {
        let w = model.weights_from_eps(eps);
        for &(x, label) in batch {
            let mut tape = Tape::new(Mode::Standard);
            let fwd = model.forward_on_tape(&mut tape, x, &w)?;
            let lp = tape.log_softmax(fwd.logits)?;
            let loss = tape.nll_loss(lp, label)?;
            nll_sum += tape.value(loss).data()[0] as f64;
            let mut g = tape.backward(loss, &seed)?;
            for (li, &(wid, bid)) in fwd.params.iter().enumerate() {
                let gw = g.take(wid);
                let gb = g.take(bid);
                let layer = &model.layers()[li];
                let (ew, eb) = &eps.layers[li];
                let [dwm, dwr, dbm, dbr] = &mut grads.layers[li];
                chain_reparam(dwm, dwr, &gw, &layer.weight.rho, ew);
                chain_reparam(dbm, dbr, &gb, &layer.bias.rho, eb);
            }
        }
    }

    let nll = nll_sum * inv;
    let kl = model.kl_to_prior();
    if kl_weight != 0.0 {
        add_kl_gradients(model, &mut grads, kl_weight);
    }
    let total = nll + kl_weight * kl;
    Ok((LossParts { nll, kl, total }, grads))
}

/// `d/d_mu = d/d_w`, `d/d_rho = d/d_w * eps * sigmoid(rho)`.
fn chain_reparam(d_mu: &mut Tensor, d_rho: &mut Tensor, g_w: &Tensor, rho: &Tensor, eps: &Tensor) {
    for (((dm, dr), (&g, &r)), &e) in d_mu
        .data_mut()
        .iter_mut()
        .zip(d_rho.data_mut())
        .zip(g_w.data().iter().zip(rho.data()))
        .zip(eps.data())
    {
        *dm += g;
        *dr += g * e * sigmoid(r);
    }
}

fn add_kl_gradients(model: &BayesianModel, grads: &mut GradientSet, kl_weight: f64) {
    let mp = model.prior().mean;
    let sp2 = model.prior().stddev * model.prior().stddev;
    let klw = kl_weight as f32;
    for (layer, g) in model.layers().iter().zip(&mut grads.layers) {
        let [dwm, dwr, dbm, dbr] = g;
        for (post, dm, dr) in [(&layer.weight, dwm, dwr), (&layer.bias, dbm, dbr)] {
            for (((d, r), &mu), &rho) in dm
                .data_mut()
                .iter_mut()
                .zip(dr.data_mut())
                .zip(post.mu.data())
                .zip(post.rho.data())
            {
                let sq = softplus(rho);
                *d += klw * (mu - mp) / sp2;
                *r += klw * (-1.0 / sq + sq / sp2) * sigmoid(rho);
            }
        }
    }
}

struct Velocity {
    layers: Vec<[Tensor; 4]>,
}

/// SGD-with-momentum driver over the variational parameters.
pub struct Trainer {
    cfg: TrainingConfig,
    velocity: Velocity,
    batches_per_epoch: usize,
    step_index: usize,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: &BayesianModel, cfg: TrainingConfig, train_len: usize) -> Result<Self> {
        cfg.check()?;
        if train_len == 0 {
            return Err(Error::EmptyInput("training set"));
        }
        let batches_per_epoch = train_len.div_ceil(cfg.batch_size);
        Ok(Trainer {
            velocity: Velocity {
                layers: GradientSet::zeros_like(model).layers,
            },
            batches_per_epoch,
            step_index: 0,
            rng: seeds::rng(cfg.rng_seed, "train-eps"),
            cfg,
        })
    }

    /// KL weight in effect for the upcoming step.
    pub fn kl_weight(&self) -> f64 {
        let scaled = 1.0 / self.batches_per_epoch as f64;
        match self.cfg.kl_schedule {
            KlSchedule::Fixed(w) => w,
            KlSchedule::BatchScaled => scaled,
            KlSchedule::WarmupFirstEpoch => {
                if self.step_index >= self.batches_per_epoch {
                    scaled
                } else {
                    scaled * (self.step_index + 1) as f64 / self.batches_per_epoch as f64
                }
            }
        }
    }

    /// One gradient step over `batch`. `at` is (epoch, batch index) for
    /// diagnostics when a loss component stops being finite.
    pub fn train_step(
        &mut self,
        model: &mut BayesianModel,
        batch: &[(&Tensor, usize)],
        at: (usize, usize),
    ) -> Result<LossParts> {
        let kl_weight = self.kl_weight();
        let eps: Vec<_> = (0..self.cfg.mc_samples_per_step)
            .map(|_| model.sample_eps(&mut self.rng))
            .collect();
        let (parts, grads) = loss_and_gradients(model, batch, &eps, kl_weight)?;
        for (component, v) in [
            ("nll", parts.nll),
            ("kl", parts.kl),
            ("total", parts.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: at.0,
                    batch: at.1,
                    component,
                });
            }
        }
        let lr = self.cfg.learning_rate;
        let mom = self.cfg.momentum;
        for (li, layer) in model.layers_mut().iter_mut().enumerate() {
            let g = &grads.layers[li];
            let v = &mut self.velocity.layers[li];
            let params = [
                (&mut layer.weight.mu, 0usize),
                (&mut layer.weight.rho, 1),
                (&mut layer.bias.mu, 2),
                (&mut layer.bias.rho, 3),
            ];
            for (tensor, gi) in params {
                for ((p, vel), &grad) in tensor
                    .data_mut()
                    .iter_mut()
                    .zip(v[gi].data_mut())
                    .zip(g[gi].data())
                {
                    *vel = mom * *vel + grad;
                    *p -= lr * *vel;
                }
            }
        }
        self.step_index += 1;
        Ok(parts)
    }

    /// Full training run; returns one stats row per epoch, with clean
    /// accuracy measured on `eval` under the deterministic mean weights.
    pub fn run(
        &mut self,
        model: &mut BayesianModel,
        train: &[(Tensor, usize)],
        eval: &[(Tensor, usize)],
    ) -> Result<Vec<EpochStats>> {
        let mut stats = Vec::with_capacity(self.cfg.epochs);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..self.cfg.epochs {
            shuffle(&mut order, &mut self.rng);
            let mut sums = (0.0f64, 0.0f64, 0.0f64);
            let mut batches = 0usize;
            for (bi, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
                let batch: Vec<(&Tensor, usize)> =
                    chunk.iter().map(|&i| (&train[i].0, train[i].1)).collect();
                let parts = self.train_step(model, &batch, (epoch, bi))?;
                sums.0 += parts.nll;
                sums.1 += parts.kl;
                sums.2 += parts.total;
                batches += 1;
            }
            let n = batches as f64;
            stats.push(EpochStats {
                epoch,
                nll: sums.0 / n,
                kl: sums.1 / n,
                total: sums.2 / n,
                clean_accuracy: accuracy(model, eval)?,
            });
        }
        Ok(stats)
    }
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Fraction of items whose mean-weight prediction matches the label.
pub fn accuracy(model: &BayesianModel, pairs: &[(Tensor, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("evaluation set"));
    }
    let w = model.mean_weights();
    let mut hits = 0usize;
    for (x, label) in pairs {
        if model.predict_class(x, &w)? == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}
