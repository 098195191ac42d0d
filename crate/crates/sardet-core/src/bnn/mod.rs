//! Mean-field Gaussian Bayesian networks.
//!
//! Every convolution and fully-connected layer carries a Gaussian
//! posterior per weight and per bias, parameterized as `(mu, rho)` with
//! `sigma = softplus(rho)`, so sigma stays positive for any finite rho.
//! Weight samples are drawn by the reparameterization `w = mu + sigma * eps`
//! with `eps` standard normal from a seeded stream. Training by variational
//! inference lives in [`train`].

mod train;

pub use train::{
    accuracy, loss_and_gradients, EpochStats, EpsSample, GradientSet, KlSchedule, LossParts,
    Trainer, TrainingConfig,
};

use crate::arch::{ArchitectureSpec, FeatShape, LayerSpec, ModelPlan};
use crate::error::{Error, Result};
use crate::ops;
use crate::seeds;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `ln(1 + e^x)`, clamped to the smallest positive normal so the sigma
/// invariant holds even where the f32 expression underflows.
pub fn softplus(x: f32) -> f32 {
    let v = x.max(0.0) + (-x.abs()).exp().ln_1p();
    v.max(f32::MIN_POSITIVE)
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Gaussian prior over every weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    pub mean: f32,
    pub stddev: f32,
}

impl PriorSpec {
    pub fn gaussian(mean: f32, stddev: f32) -> Result<Self> {
        if !(stddev > 0.0 && stddev.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidParam {
                name: "prior",
                detail: format!("need finite mean and stddev > 0, got N({mean}, {stddev})"),
            });
        }
        Ok(PriorSpec { mean, stddev })
    }
}

impl Default for PriorSpec {
    /// N(0, 0.1^2): a small-variance prior suited to small datasets.
    fn default() -> Self {
        PriorSpec {
            mean: 0.0,
            stddev: 0.1,
        }
    }
}

/// Variational parameters governing one weight tensor.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mu: Tensor,
    pub rho: Tensor,
}

impl GaussianPosterior {
    /// `softplus(rho)` element-wise; positive for all finite rho.
    pub fn sigma(&self) -> Tensor {
        let mut s = self.rho.clone();
        for v in s.data_mut() {
            *v = softplus(*v);
        }
        s
    }
}

/// Posteriors for one parameterized layer.
#[derive(Clone, Debug)]
pub struct LayerPosterior {
    pub weight: GaussianPosterior,
    pub bias: GaussianPosterior,
}

/// One concrete draw of all network weights.
#[derive(Clone, Debug)]
pub struct WeightSample {
    /// `(weight, bias)` per parameterized layer, in declaration order.
    pub layers: Vec<(Tensor, Tensor)>,
}

/// Ids of the values a taped forward pass recorded, for reading gradients.
pub struct TapedForward {
    pub input: ValueId,
    pub logits: ValueId,
    /// `(weight, bias)` leaf ids per parameterized layer.
    pub params: Vec<(ValueId, ValueId)>,
}

/// A Bayesian CNN: validated architecture plus per-layer posteriors.
#[derive(Clone, Debug)]
pub struct BayesianModel {
    arch: ArchitectureSpec,
    plan: ModelPlan,
    prior: PriorSpec,
    layers: Vec<LayerPosterior>,
}

impl BayesianModel {
    /// Builds a model with fan-in-scaled zero-mean `mu` initialization and
    /// a constant `rho` giving small initial sigma.
    pub fn build(arch: ArchitectureSpec, prior: PriorSpec, seed: u64) -> Result<Self> {
        Self::build_with_rho(arch, prior, seed, -5.0)
    }

    /// As [`build`](Self::build) with an explicit initial rho.
    pub fn build_with_rho(
        arch: ArchitectureSpec,
        prior: PriorSpec,
        seed: u64,
        rho_init: f32,
    ) -> Result<Self> {
        let plan = arch.validate()?;
        let mut rng = seeds::rng_from(seed);
        let mut layers = Vec::new();
        for step in &plan.steps {
            let Some((w_shape, b_shape)) = step.param_shapes() else {
                continue;
            };
            let fan_in: usize = match step.layer {
                LayerSpec::Conv { kernel, .. } => match step.input {
                    FeatShape::Map { c, .. } => c * kernel * kernel,
                    FeatShape::Flat(_) => unreachable!("validated"),
                },
                LayerSpec::Fc { .. } => step.input.numel(),
                _ => unreachable!("param_shapes is Some only for conv/fc"),
            };
            let std = (2.0 / fan_in as f32).sqrt();
            let w_n: usize = w_shape.iter().product();
            let mu_data: Vec<f32> = (0..w_n)
                .map(|_| {
                    let e: f32 = rng.sample(StandardNormal);
                    e * std
                })
                .collect();
            layers.push(LayerPosterior {
                weight: GaussianPosterior {
                    mu: Tensor::new(w_shape.clone(), mu_data)?,
                    rho: Tensor::filled(w_shape, rho_init),
                },
                bias: GaussianPosterior {
                    mu: Tensor::zeros(b_shape.clone()),
                    rho: Tensor::filled(b_shape, rho_init),
                },
            });
        }
        Ok(BayesianModel {
            arch,
            plan,
            prior,
            layers,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn plan(&self) -> &ModelPlan {
        &self.plan
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn layers(&self) -> &[LayerPosterior] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerPosterior] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let (c, h, w) = self.arch.input;
        [c, h, w]
    }

    /// Total count of weight and bias scalars across all layers.
    pub fn num_weights(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.mu.len() + l.bias.mu.len())
            .sum()
    }

    /// Standard-normal noise for every parameter, one draw per scalar,
    /// consumed in declaration order (weights before biases).
    pub fn sample_eps(&self, rng: &mut ChaCha8Rng) -> EpsSample {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let we: Vec<f32> = (0..l.weight.mu.len())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let be: Vec<f32> = (0..l.bias.mu.len())
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                (
                    Tensor::from_raw(l.weight.mu.shape().to_vec(), we),
                    Tensor::from_raw(l.bias.mu.shape().to_vec(), be),
                )
            })
            .collect();
        EpsSample { layers }
    }

    /// `w = mu + softplus(rho) * eps` per parameter.
    pub fn weights_from_eps(&self, eps: &EpsSample) -> WeightSample {
        let layers = self
            .layers
            .iter()
            .zip(&eps.layers)
            .map(|(l, (ew, eb))| {
                (
                    reparameterize(&l.weight, ew),
                    reparameterize(&l.bias, eb),
                )
            })
            .collect();
        WeightSample { layers }
    }

    /// Draws one weight sample from the seeded stream.
    pub fn sample_weights(&self, seed: u64) -> WeightSample {
        let mut rng = seeds::rng_from(seed);
        let eps = self.sample_eps(&mut rng);
        self.weights_from_eps(&eps)
    }

    /// The deterministic sample with eps = 0, i.e. `w = mu` exactly.
    pub fn mean_weights(&self) -> WeightSample {
        WeightSample {
            layers: self
                .layers
                .iter()
                .map(|l| (l.weight.mu.clone(), l.bias.mu.clone()))
                .collect(),
        }
    }

    /// Closed-form KL(posterior || prior) in nats, summed over every
    /// weight and bias: `ln(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2`.
    pub fn kl_to_prior(&self) -> f64 {
        let mp = self.prior.mean as f64;
        let sp = self.prior.stddev as f64;
        let mut total = 0.0f64;
        for layer in &self.layers {
            for post in [&layer.weight, &layer.bias] {
                for (&mu, &rho) in post.mu.data().iter().zip(post.rho.data()) {
                    let sq = softplus(rho) as f64;
                    let mq = mu as f64;
                    total += (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp)
                        - 0.5;
                }
            }
        }
        total
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                op: "model input",
                expected: format!("{:?}", self.input_shape()),
                got: format!("{:?}", x.shape()),
            });
        }
        Ok(())
    }

    /// Tape-free forward pass returning the logit vector.
    pub fn forward_logits(&self, x: &Tensor, w: &WeightSample) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut pi = 0;
        for step in &self.plan.steps {
            cur = match step.layer {
                LayerSpec::Conv { .. } => {
                    let (wt, bt) = &w.layers[pi];
                    pi += 1;
                    ops::conv2d(&cur, wt, bt)?
                }
                LayerSpec::Relu => ops::relu(&cur),
                LayerSpec::MaxPool { window, stride } => ops::max_pool(&cur, window, stride)?.0,
                LayerSpec::Fc { .. } => {
                    let (wt, bt) = &w.layers[pi];
                    pi += 1;
                    let flat = cur.clone().reshaped(vec![cur.len()])?;
                    ops::fully_connected(&flat, wt, bt)?
                }
            };
        }
        cur.reshaped(vec![self.num_classes()])
    }

    /// Forward pass recorded on `tape` up to the pre-softmax logits.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        x: &Tensor,
        w: &WeightSample,
    ) -> Result<TapedForward> {
        self.check_input(x)?;
        let input = tape.leaf(x.clone());
        let mut params = Vec::with_capacity(w.layers.len());
        let mut cur = input;
        let mut pi = 0;
        for step in &self.plan.steps {
            cur = match step.layer {
                LayerSpec::Conv { .. } => {
                    let (wt, bt) = &w.layers[pi];
                    pi += 1;
                    let wid = tape.leaf(wt.clone());
                    let bid = tape.leaf(bt.clone());
                    params.push((wid, bid));
                    tape.conv2d(cur, wid, bid)?
                }
                LayerSpec::Relu => tape.relu(cur),
                LayerSpec::MaxPool { window, stride } => tape.max_pool(cur, window, stride)?,
                LayerSpec::Fc { .. } => {
                    let (wt, bt) = &w.layers[pi];
                    pi += 1;
                    let wid = tape.leaf(wt.clone());
                    let bid = tape.leaf(bt.clone());
                    params.push((wid, bid));
                    let n = tape.value(cur).len();
                    let flat = tape.reshape(cur, vec![n])?;
                    tape.fully_connected(flat, wid, bid)?
                }
            };
        }
        let logits = tape.reshape(cur, vec![self.num_classes()])?;
        Ok(TapedForward {
            input,
            logits,
            params,
        })
    }

    /// Predicted class under the given sample; ties take the lowest index.
    pub fn predict_class(&self, x: &Tensor, w: &WeightSample) -> Result<usize> {
        Ok(self.forward_logits(x, w)?.argmax())
    }
}

fn reparameterize(post: &GaussianPosterior, eps: &Tensor) -> Tensor {
    let mut out = post.mu.clone();
    for ((o, &r), &e) in out
        .data_mut()
        .iter_mut()
        .zip(post.rho.data())
        .zip(eps.data())
    {
        *o += softplus(r) * e;
    }
    out
}
