//! Variational autoencoder: encoder with (mu, log-variance) heads, sigmoid
//! decoder, Gaussian-KL + Bernoulli-cross-entropy loss, and reconstruction
//! with configurable latent sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::models::{Dense, DenseNodes, ParamMode, ParamSet, VaeArchitecture};
use crate::tensor::{Bindings, Graph, GraphBuilder, NodeId, Real, Tensor, LOG_CLAMP};

/// Per-example encoder output: mean and log-variance of the latent Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution {
    pub mu: Vec<f32>,
    pub log_var: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub layers: Vec<Dense<F>>,
    pub mu: Dense<F>,
    pub log_var: Dense<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<F> {
    pub layers: Vec<Dense<F>>,
    pub out: Dense<F>,
}

/// Full VAE parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeParams<F> {
    pub arch: VaeArchitecture,
    pub encoder: EncoderParams<F>,
    pub decoder: DecoderParams<F>,
}

#[derive(Clone, Debug)]
pub struct EncoderNodes {
    pub layers: Vec<DenseNodes>,
    pub mu: DenseNodes,
    pub log_var: DenseNodes,
}

impl EncoderNodes {
    /// Apply the encoder to `x`, returning `(mu, log_var)` node ids.
    pub fn forward<F: Real>(
        &self,
        g: &mut GraphBuilder<F>,
        x: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let mut h = x;
        for nodes in &self.layers {
            h = nodes.affine(g, h)?;
            h = g.relu(h);
        }
        let mu = self.mu.affine(g, h)?;
        let log_var = self.log_var.affine(g, h)?;
        Ok((mu, log_var))
    }
}

#[derive(Clone, Debug)]
pub struct DecoderNodes {
    pub layers: Vec<DenseNodes>,
    pub out: DenseNodes,
}

impl DecoderNodes {
    /// Apply the decoder to `z`, returning pre-sigmoid pixel logits.
    pub fn logits<F: Real>(&self, g: &mut GraphBuilder<F>, z: NodeId) -> Result<NodeId> {
        let mut h = z;
        for nodes in &self.layers {
            h = nodes.affine(g, h)?;
            h = g.relu(h);
        }
        self.out.affine(g, h)
    }
}

impl<F: Real> VaeParams<F> {
    pub fn init(arch: VaeArchitecture, rng: &mut ChaCha8Rng) -> Self {
        let mut enc_layers = Vec::new();
        let mut width = arch.input_dim;
        for &h in &arch.hidden {
            enc_layers.push(Dense::glorot(width, h, rng));
            width = h;
        }
        let mu = Dense::glorot(width, arch.latent_dim, rng);
        let log_var = Dense::glorot(width, arch.latent_dim, rng);

        let mut dec_layers = Vec::new();
        width = arch.latent_dim;
        for &h in arch.hidden.iter().rev() {
            dec_layers.push(Dense::glorot(width, h, rng));
            width = h;
        }
        let out = Dense::glorot(width, arch.input_dim, rng);

        VaeParams {
            arch,
            encoder: EncoderParams {
                layers: enc_layers,
                mu,
                log_var,
            },
            decoder: DecoderParams {
                layers: dec_layers,
                out,
            },
        }
    }

    pub fn cast<G: Real>(&self) -> VaeParams<G> {
        VaeParams {
            arch: self.arch.clone(),
            encoder: EncoderParams {
                layers: self.encoder.layers.iter().map(Dense::cast).collect(),
                mu: self.encoder.mu.cast(),
                log_var: self.encoder.log_var.cast(),
            },
            decoder: DecoderParams {
                layers: self.decoder.layers.iter().map(Dense::cast).collect(),
                out: self.decoder.out.cast(),
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn emit_encoder(&self, g: &mut GraphBuilder<F>, mode: ParamMode) -> Result<EncoderNodes> {
        let mut layers = Vec::with_capacity(self.encoder.layers.len());
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            layers.push(layer.emit(g, mode, &format!("enc.h{i}"))?);
        }
        Ok(EncoderNodes {
            layers,
            mu: self.encoder.mu.emit(g, mode, "enc.mu")?,
            log_var: self.encoder.log_var.emit(g, mode, "enc.logvar")?,
        })
    }

    pub fn emit_decoder(&self, g: &mut GraphBuilder<F>, mode: ParamMode) -> Result<DecoderNodes> {
        let mut layers = Vec::with_capacity(self.decoder.layers.len());
        for (i, layer) in self.decoder.layers.iter().enumerate() {
            layers.push(layer.emit(g, mode, &format!("dec.h{i}"))?);
        }
        Ok(DecoderNodes {
            layers,
            out: self.decoder.out.emit(g, mode, "dec.out")?,
        })
    }
}

impl<F: Real> ParamSet<F> for VaeParams<F> {
    fn visit<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<F>)) {
        for (i, layer) in self.encoder.layers.iter().enumerate() {
            layer.visit(&format!("enc.h{i}"), f);
        }
        self.encoder.mu.visit("enc.mu", f);
        self.encoder.log_var.visit("enc.logvar", f);
        for (i, layer) in self.decoder.layers.iter().enumerate() {
            layer.visit(&format!("dec.h{i}"), f);
        }
        self.decoder.out.visit("dec.out", f);
    }

    fn visit_mut<'a>(&'a mut self, _prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<F>)) {
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("enc.h{i}"), f);
        }
        self.encoder.mu.visit_mut("enc.mu", f);
        self.encoder.log_var.visit_mut("enc.logvar", f);
        for (i, layer) in self.decoder.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("dec.h{i}"), f);
        }
        self.decoder.out.visit_mut("dec.out", f);
    }
}

/// In-graph summed Gaussian KL against the standard-normal prior:
/// `0.5 * sum(mu^2 + exp(log_var) - log_var - 1)` over all rows and latents.
pub fn kl_sum_node<F: Real>(
    g: &mut GraphBuilder<F>,
    mu: NodeId,
    log_var: NodeId,
    elements: usize,
) -> Result<NodeId> {
    let mu_sq = g.square(mu);
    let s_mu = g.sum(mu_sq);
    let var = g.exp(log_var);
    let s_var = g.sum(var);
    let s_lv = g.sum(log_var);
    let t = g.add(s_mu, s_var)?;
    let t = g.sub(t, s_lv)?;
    let count = g.constant(Tensor::scalar(F::from_f64(elements as f64)));
    let t = g.sub(t, count)?;
    Ok(g.scale(t, F::from_f64(0.5)))
}

/// In-graph reparametrization `z = mu + eps * exp(log_var / 2)`.
pub fn reparameterize_node<F: Real>(
    g: &mut GraphBuilder<F>,
    mu: NodeId,
    log_var: NodeId,
    eps: NodeId,
) -> Result<NodeId> {
    let half_lv = g.scale(log_var, F::from_f64(0.5));
    let sigma = g.exp(half_lv);
    let noise = g.mul(eps, sigma)?;
    g.add(mu, noise)
}

/// Training bundle: one graph per batch size with inputs `x`, `eps`, and all
/// parameters; outputs `loss`, `kl`, `ce` (per-example means).
pub struct VaeTraining;

impl VaeTraining {
    pub fn graph<F: Real>(params: &VaeParams<F>, batch: usize) -> Result<Graph<F>> {
        let arch = &params.arch;
        let mut g = GraphBuilder::new();
        let x = g.input("x", vec![batch, arch.input_dim])?;
        let eps = g.input("eps", vec![batch, arch.latent_dim])?;
        let enc = params.emit_encoder(&mut g, ParamMode::Trainable)?;
        let dec = params.emit_decoder(&mut g, ParamMode::Trainable)?;
        let (mu, log_var) = enc.forward(&mut g, x)?;
        let kl_sum = kl_sum_node(&mut g, mu, log_var, batch * arch.latent_dim)?;
        let z = reparameterize_node(&mut g, mu, log_var, eps)?;
        let logits = dec.logits(&mut g, z)?;
        let ce_sum = g.bernoulli_xent(logits, x)?;
        let total = g.add(kl_sum, ce_sum)?;
        let inv_n = F::from_f64(1.0 / batch as f64);
        let loss = g.scale(total, inv_n);
        let kl = g.scale(kl_sum, inv_n);
        let ce = g.scale(ce_sum, inv_n);
        g.output("loss", loss);
        g.output("kl", kl);
        g.output("ce", ce);
        Ok(g.finish())
    }
}

fn row_tensor(image: &[f32]) -> Tensor<f32> {
    Tensor::row(image.to_vec())
}

/// Batched encoder pass returning `(mu, log_var)`, each `[n, latent]`.
pub fn encode_batch(vae: &VaeParams<f32>, x: &Tensor<f32>) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut g = GraphBuilder::new();
    let xin = g.input("x", x.shape().to_vec())?;
    let enc = vae.emit_encoder(&mut g, ParamMode::Frozen)?;
    let (mu, log_var) = enc.forward(&mut g, xin)?;
    g.output("mu", mu);
    g.output("log_var", log_var);
    let graph = g.finish();
    let mut b = Bindings::new();
    b.set("x", x);
    let eval = graph.forward(&b)?;
    Ok((eval.output("mu")?.clone(), eval.output("log_var")?.clone()))
}

/// Batched mean-vector encoding (the latent representation used throughout
/// the attacks).
pub fn encode_mu_batch(vae: &VaeParams<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(encode_batch(vae, x)?.0)
}

/// Encode one image.
pub fn encode(vae: &VaeParams<f32>, image: &[f32]) -> Result<LatentDistribution> {
    let (mu, log_var) = encode_batch(vae, &row_tensor(image))?;
    Ok(LatentDistribution {
        mu: mu.into_data(),
        log_var: log_var.into_data(),
    })
}

/// Batched decoder pass: latents `[n, latent]` to pixel probabilities
/// `[n, input]`, strictly inside `(0, 1)` via the terminal sigmoid.
pub fn decode_batch(vae: &VaeParams<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = GraphBuilder::new();
    let zin = g.input("z", z.shape().to_vec())?;
    let dec = vae.emit_decoder(&mut g, ParamMode::Frozen)?;
    let logits = dec.logits(&mut g, zin)?;
    let xhat = g.sigmoid(logits);
    g.output("xhat", xhat);
    let graph = g.finish();
    let mut b = Bindings::new();
    b.set("z", z);
    let eval = graph.forward(&b)?;
    Ok(eval.output("xhat")?.clone())
}

/// Decode one latent vector.
pub fn decode(vae: &VaeParams<f32>, z: &[f32]) -> Result<Vec<f32>> {
    Ok(decode_batch(vae, &row_tensor(z))?.into_data())
}

/// `z = mu + eps * sqrt(var)`, elementwise.
pub fn reparameterize(dist: &LatentDistribution, eps: &[f32]) -> Vec<f32> {
    dist.mu
        .iter()
        .zip(&dist.log_var)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + e * (lv / 2.0).exp())
        .collect()
}

/// Closed-form KL divergence of the encoded Gaussian from the N(0, I) prior.
pub fn kl_gaussian(dist: &LatentDistribution) -> f64 {
    dist.mu
        .iter()
        .zip(&dist.log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (f64::from(m), f64::from(lv));
            0.5 * (m * m + lv.exp() - lv - 1.0)
        })
        .sum()
}

/// Minimized VAE objective for one example: KL plus the pixelwise Bernoulli
/// cross-entropy between `x` and its reconstruction.
pub fn vae_loss(x: &[f32], dist: &LatentDistribution, xhat: &[f32]) -> f64 {
    kl_gaussian(dist) + bernoulli_ce(x, xhat)
}

/// `H[x, xhat]` with logs clamped at the shared floor.
pub fn bernoulli_ce(x: &[f32], xhat: &[f32]) -> f64 {
    x.iter()
        .zip(xhat)
        .map(|(&t, &p)| {
            let (t, p) = (f64::from(t), f64::from(p));
            -(t * p.max(LOG_CLAMP).ln() + (1.0 - t) * (1.0 - p).max(LOG_CLAMP).ln())
        })
        .sum()
}

/// Mean of `count` sampled reconstructions with the provided noise rows
/// (one `[n, latent]` tensor per sample). Empty list means the mean vector
/// is decoded directly.
pub fn reconstruct_with_eps(
    vae: &VaeParams<f32>,
    x: &Tensor<f32>,
    eps_list: &[Tensor<f32>],
) -> Result<Tensor<f32>> {
    let (mu, log_var) = encode_batch(vae, x)?;
    if eps_list.is_empty() {
        return decode_batch(vae, &mu);
    }
    let mut acc: Option<Tensor<f32>> = None;
    for eps in eps_list {
        let z_data: Vec<f32> = mu
            .data()
            .iter()
            .zip(log_var.data())
            .zip(eps.data())
            .map(|((&m, &lv), &e)| m + e * (lv / 2.0).exp())
            .collect();
        let z = Tensor::new(mu.shape().to_vec(), z_data)?;
        let decoded = decode_batch(vae, &z)?;
        acc = Some(match acc {
            None => decoded,
            Some(mut a) => {
                for (v, &d) in a.data_mut().iter_mut().zip(decoded.data()) {
                    *v += d;
                }
                a
            }
        });
    }
    let mut mean = acc.expect("non-empty eps list");
    let inv = 1.0 / eps_list.len() as f32;
    mean.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(mean)
}

/// Reconstruct a batch. `sample_count == 0` decodes the mean vector;
/// `k > 0` averages `k` sampled reconstructions using the given generator.
pub fn reconstruct_batch(
    vae: &VaeParams<f32>,
    x: &Tensor<f32>,
    sample_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<f32>> {
    let n = x.rows();
    let d = vae.latent_dim();
    let eps_list: Vec<Tensor<f32>> = (0..sample_count)
        .map(|_| {
            let data: Vec<f32> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
            Tensor::new(vec![n, d], data).expect("sized")
        })
        .collect();
    reconstruct_with_eps(vae, x, &eps_list)
}

/// Reconstruct one image.
pub fn reconstruct(
    vae: &VaeParams<f32>,
    image: &[f32],
    sample_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f32>> {
    Ok(reconstruct_batch(vae, &row_tensor(image), sample_count, rng)?.into_data())
}

/// Zero-parameter VAE used by degenerate-case tests.
#[cfg(test)]
pub(crate) fn zeroed(arch: VaeArchitecture) -> VaeParams<f32> {
    let mut p = VaeParams::init(arch, &mut crate::rng::seeded_rng(0, "zero"));
    p.visit_mut("", &mut |_, t| {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    });
    p
}
