//! Fully-connected encoder / decoder / classifier / discriminator networks.
//!
//! Parameter structs are plain tensor holders; the same struct can be emitted
//! into a computation graph either as trainable named inputs (gradients flow,
//! values bound per step) or as frozen constants (attack graphs). Weight
//! init is uniform in `±sqrt(6 / (fan_in + fan_out))` with zero biases; the
//! scheme is recorded in checkpoints.

pub mod classifier;
pub mod discriminator;
pub mod vae;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Bindings, GraphBuilder, NodeId, Real, Tensor};

pub use classifier::{classify_latent, classify_logits_batch, ClassifierTraining};
pub use discriminator::{gan_losses, GanGraphs};
pub use vae::{
    decode, decode_batch, encode, encode_batch, encode_mu_batch, kl_gaussian, reconstruct,
    reconstruct_batch, reparameterize, vae_loss, LatentDistribution, VaeParams, VaeTraining,
};

/// Widths of a plain MLP: `input -> hidden... -> output`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

/// Encoder/decoder widths. The encoder maps `input -> hidden... -> 2 * latent`
/// (mu and log-variance heads); the decoder mirrors it back.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

impl VaeArchitecture {
    /// 784 -> 512 -> 50-dimensional latents.
    pub fn mnist_default() -> Self {
        VaeArchitecture {
            input_dim: 784,
            hidden: vec![512],
            latent_dim: 50,
        }
    }
}

impl MlpArchitecture {
    /// Latent classifier: two 512-unit hidden layers onto 10 classes.
    pub fn latent_classifier(latent_dim: usize) -> Self {
        MlpArchitecture {
            input_dim: latent_dim,
            hidden: vec![512, 512],
            output_dim: 10,
        }
    }

    /// Real/fake discriminator over images.
    pub fn discriminator(input_dim: usize) -> Self {
        MlpArchitecture {
            input_dim,
            hidden: vec![512, 512],
            output_dim: 1,
        }
    }
}

/// How parameters enter a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamMode {
    /// Named inputs; values are bound per evaluation and receive gradients.
    Trainable,
    /// Embedded constants; the backward pass skips them entirely.
    Frozen,
}

/// One affine layer: `y = x W + b`, weight `[in, out]`, bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> Dense<F> {
    pub fn glorot(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| F::from_f64(rng.random_range(-bound..bound)))
            .collect();
        Dense {
            weight: Tensor::new(vec![input, output], data).expect("sized"),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn cast<G: Real>(&self) -> Dense<G> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    fn visit<'a>(&'a self, name: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        f(format!("{name}.w"), &self.weight);
        f(format!("{name}.b"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, name: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        f(format!("{name}.w"), &mut self.weight);
        f(format!("{name}.b"), &mut self.bias);
    }

    fn emit(&self, g: &mut GraphBuilder<F>, mode: ParamMode, name: &str) -> Result<DenseNodes> {
        Ok(match mode {
            ParamMode::Trainable => DenseNodes {
                w: g.input(&format!("{name}.w"), self.weight.shape().to_vec())?,
                b: g.input(&format!("{name}.b"), self.bias.shape().to_vec())?,
            },
            ParamMode::Frozen => DenseNodes {
                w: g.constant(self.weight.clone()),
                b: g.constant(self.bias.clone()),
            },
        })
    }
}

/// Graph node ids of one emitted dense layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseNodes {
    pub w: NodeId,
    pub b: NodeId,
}

impl DenseNodes {
    /// `x W + b`
    pub fn affine<F: Real>(&self, g: &mut GraphBuilder<F>, x: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, self.w)?;
        g.bias_add(y, self.b)
    }
}

/// Named-parameter traversal shared by binding, checkpointing, and Adam.
pub trait ParamSet<F: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>));

    /// Bind every parameter tensor under `prefix` into `bindings`.
    fn bind<'t>(&'t self, prefix: &str, bindings: &mut Bindings<'t, F>) {
        self.visit(prefix, &mut |name, t| {
            bindings.set(&name, t);
        });
    }

    fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(prefix, &mut |name, _| names.push(name));
        names
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        self.visit_mut(prefix, &mut |name, t| out.push((name, t)));
        out
    }

    /// Total parameter count.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("p", &mut |_, t| n += t.numel());
        n
    }
}

/// Hidden relu stack plus a linear output head; the classifier and the
/// discriminator are both this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<F> {
    pub arch: MlpArchitecture,
    pub layers: Vec<Dense<F>>,
    pub output: Dense<F>,
}

impl<F: Real> MlpParams<F> {
    pub fn init(arch: MlpArchitecture, rng: &mut ChaCha8Rng) -> Self {
        let mut layers = Vec::new();
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            layers.push(Dense::glorot(width, h, rng));
            width = h;
        }
        let output = Dense::glorot(width, arch.output_dim, rng);
        MlpParams {
            arch,
            layers,
            output,
        }
    }

    pub fn cast<G: Real>(&self) -> MlpParams<G> {
        MlpParams {
            arch: self.arch.clone(),
            layers: self.layers.iter().map(Dense::cast).collect(),
            output: self.output.cast(),
        }
    }

    /// Emit the parameters once; apply them with [`MlpNodes::logits`].
    pub fn emit(&self, g: &mut GraphBuilder<F>, mode: ParamMode, prefix: &str) -> Result<MlpNodes> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            layers.push(layer.emit(g, mode, &format!("{prefix}.h{i}"))?);
        }
        let output = self.output.emit(g, mode, &format!("{prefix}.out"))?;
        Ok(MlpNodes { layers, output })
    }

    /// Emit the net and return the logits node for input `x`.
    pub fn emit_logits(
        &self,
        g: &mut GraphBuilder<F>,
        mode: ParamMode,
        prefix: &str,
        x: NodeId,
    ) -> Result<NodeId> {
        let nodes = self.emit(g, mode, prefix)?;
        nodes.logits(g, x)
    }
}

/// Node ids of one emitted MLP; may be applied to several inputs in the same
/// graph (the discriminator judges real and fake batches with shared weights).
#[derive(Clone, Debug)]
pub struct MlpNodes {
    pub layers: Vec<DenseNodes>,
    pub output: DenseNodes,
}

impl MlpNodes {
    pub fn logits<F: Real>(&self, g: &mut GraphBuilder<F>, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for nodes in &self.layers {
            h = nodes.affine(g, h)?;
            h = g.relu(h);
        }
        self.output.affine(g, h)
    }
}

impl<F: Real> ParamSet<F> for MlpParams<F> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("{prefix}.h{i}"), f);
        }
        self.output.visit(&format!("{prefix}.out"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("{prefix}.h{i}"), f);
        }
        self.output.visit_mut(&format!("{prefix}.out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn init_is_seed_deterministic() {
        let arch = MlpArchitecture::latent_classifier(8);
        let a = MlpParams::<f32>::init(arch.clone(), &mut seeded_rng(3, "init"));
        let b = MlpParams::<f32>::init(arch, &mut seeded_rng(3, "init"));
        assert_eq!(a, b);
    }

    #[test]
    fn param_names_are_stable_and_ordered() {
        let arch = MlpArchitecture {
            input_dim: 4,
            hidden: vec![3, 2],
            output_dim: 2,
        };
        let p = MlpParams::<f32>::init(arch, &mut seeded_rng(0, "init"));
        assert_eq!(
            p.param_names("clf"),
            vec!["clf.h0.w", "clf.h0.b", "clf.h1.w", "clf.h1.b", "clf.out.w", "clf.out.b"]
        );
        assert_eq!(p.param_count(), 4 * 3 + 3 + 3 * 2 + 2 + 2 * 2 + 2);
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = seeded_rng(1, "init");
        let d = Dense::<f32>::glorot(30, 20, &mut rng);
        let bound = (6.0f32 / 50.0).sqrt();
        assert!(d.weight.data().iter().all(|&w| w.abs() <= bound));
        assert!(d.bias.data().iter().all(|&b| b == 0.0));
    }
}
