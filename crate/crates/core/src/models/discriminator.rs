//! Real/fake discriminator and the non-saturating GAN losses that replace
//! the cross-entropy reconstruction term when training the VAE-GAN variant.

use crate::error::Result;
use crate::models::vae::{kl_sum_node, reparameterize_node, VaeParams};
use crate::models::{MlpParams, ParamMode};
use crate::tensor::{Bindings, Graph, GraphBuilder, Real, Tensor};

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Non-saturating GAN losses from discriminator logits, both per-example
/// means. The discriminator loss averages its real and fake judgments, so a
/// maximally uncertain discriminator scores `ln 2` on both losses.
fn losses_from_logits(real: &[f32], fake: &[f32]) -> (f64, f64) {
    let n = real.len() as f64;
    // -ln D(x) for real, -ln (1 - D(xhat)) for fake.
    let d_real: f64 = real.iter().map(|&l| softplus(-f64::from(l))).sum();
    let d_fake: f64 = fake.iter().map(|&l| softplus(f64::from(l))).sum();
    let disc = (d_real + d_fake) / (2.0 * n);
    // Generator wants D(xhat) = 1.
    let gen = fake.iter().map(|&l| softplus(-f64::from(l))).sum::<f64>() / n;
    (disc, gen)
}

/// Discriminator and generator losses for a batch of real images and their
/// reconstructions.
pub fn gan_losses(
    disc: &MlpParams<f32>,
    real: &Tensor<f32>,
    reconstructed: &Tensor<f32>,
) -> Result<(f64, f64)> {
    let mut g = GraphBuilder::new();
    let xr = g.input("real", real.shape().to_vec())?;
    let xf = g.input("fake", reconstructed.shape().to_vec())?;
    let nodes = disc.emit(&mut g, ParamMode::Frozen, "disc")?;
    let lr = nodes.logits(&mut g, xr)?;
    let lf = nodes.logits(&mut g, xf)?;
    g.output("real_logits", lr);
    g.output("fake_logits", lf);
    let graph = g.finish();
    let mut b = Bindings::new();
    b.set("real", real);
    b.set("fake", reconstructed);
    let eval = graph.forward(&b)?;
    Ok(losses_from_logits(
        eval.output("real_logits")?.data(),
        eval.output("fake_logits")?.data(),
    ))
}

/// Graphs for one alternating VAE-GAN training step at a fixed batch size.
///
/// All parameters enter every graph as named inputs; each step backpropagates
/// only into its own side (the active-set pruning skips the other side's
/// gradient GEMMs).
pub struct GanGraphs<F: Real> {
    /// Inputs `x`, `eps`, VAE params, disc params; outputs `loss`
    /// (kl + adversarial, per-example mean), `kl`, `adv`, and `xhat`.
    pub generator: Graph<F>,
    /// Inputs `real`, `fake`, disc params; output `loss` (mean over the
    /// 2n real-and-fake judgments).
    pub discriminator: Graph<F>,
}

impl<F: Real> GanGraphs<F> {
    pub fn build(vae: &VaeParams<F>, disc: &MlpParams<F>, batch: usize) -> Result<Self> {
        let arch = &vae.arch;

        let generator = {
            let mut g = GraphBuilder::new();
            let x = g.input("x", vec![batch, arch.input_dim])?;
            let eps = g.input("eps", vec![batch, arch.latent_dim])?;
            let enc = vae.emit_encoder(&mut g, ParamMode::Trainable)?;
            let dec = vae.emit_decoder(&mut g, ParamMode::Trainable)?;
            let disc_nodes = disc.emit(&mut g, ParamMode::Trainable, "disc")?;
            let (mu, log_var) = enc.forward(&mut g, x)?;
            let kl_sum = kl_sum_node(&mut g, mu, log_var, batch * arch.latent_dim)?;
            let z = reparameterize_node(&mut g, mu, log_var, eps)?;
            let logits = dec.logits(&mut g, z)?;
            let xhat = g.sigmoid(logits);
            let fake_logits = disc_nodes.logits(&mut g, xhat)?;
            // Non-saturating objective: make the discriminator call xhat real.
            let ones = g.constant(Tensor::new(vec![batch, 1], vec![F::one(); batch]).expect("sized"));
            let adv_sum = g.bernoulli_xent(fake_logits, ones)?;
            let total = g.add(kl_sum, adv_sum)?;
            let inv_n = F::from_f64(1.0 / batch as f64);
            let loss = g.scale(total, inv_n);
            let kl = g.scale(kl_sum, inv_n);
            let adv = g.scale(adv_sum, inv_n);
            g.output("loss", loss);
            g.output("kl", kl);
            g.output("adv", adv);
            g.output("xhat", xhat);
            Ok::<_, crate::error::Error>(g.finish())
        }?;

        let discriminator = {
            let mut g = GraphBuilder::new();
            let real = g.input("real", vec![batch, arch.input_dim])?;
            let fake = g.input("fake", vec![batch, arch.input_dim])?;
            let disc_nodes = disc.emit(&mut g, ParamMode::Trainable, "disc")?;
            let real_logits = disc_nodes.logits(&mut g, real)?;
            let fake_logits = disc_nodes.logits(&mut g, fake)?;
            let ones = g.constant(Tensor::new(vec![batch, 1], vec![F::one(); batch]).expect("sized"));
            let zeros = g.constant(Tensor::zeros(vec![batch, 1]));
            let ce_real = g.bernoulli_xent(real_logits, ones)?;
            let ce_fake = g.bernoulli_xent(fake_logits, zeros)?;
            let total = g.add(ce_real, ce_fake)?;
            let loss = g.scale(total, F::from_f64(1.0 / (2 * batch) as f64));
            g.output("loss", loss);
            Ok::<_, crate::error::Error>(g.finish())
        }?;

        Ok(GanGraphs {
            generator,
            discriminator,
        })
    }
}

/// Fraction of correct real/fake judgments at the 0.5 threshold.
pub fn discriminator_accuracy(
    disc: &MlpParams<f32>,
    real: &Tensor<f32>,
    reconstructed: &Tensor<f32>,
) -> Result<f64> {
    let mut g = GraphBuilder::new();
    let xr = g.input("real", real.shape().to_vec())?;
    let xf = g.input("fake", reconstructed.shape().to_vec())?;
    let nodes = disc.emit(&mut g, ParamMode::Frozen, "disc")?;
    let lr = nodes.logits(&mut g, xr)?;
    let lf = nodes.logits(&mut g, xf)?;
    g.output("real_logits", lr);
    g.output("fake_logits", lf);
    let graph = g.finish();
    let mut b = Bindings::new();
    b.set("real", real);
    b.set("fake", reconstructed);
    let eval = graph.forward(&b)?;
    let hits_real = eval
        .output("real_logits")?
        .data()
        .iter()
        .filter(|&&l| l > 0.0)
        .count();
    let hits_fake = eval
        .output("fake_logits")?
        .data()
        .iter()
        .filter(|&&l| l <= 0.0)
        .count();
    let total = real.rows() + reconstructed.rows();
    Ok((hits_real + hits_fake) as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MlpArchitecture, ParamSet};
    use crate::rng::seeded_rng;

    fn zero_disc(dim: usize) -> MlpParams<f32> {
        let mut d = MlpParams::init(
            MlpArchitecture {
                input_dim: dim,
                hidden: vec![4],
                output_dim: 1,
            },
            &mut seeded_rng(0, "init"),
        );
        d.visit_mut("", &mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        });
        d
    }

    #[test]
    fn uncertain_discriminator_scores_ln2_on_both_losses() {
        // Zero weights -> sigmoid(0) = 0.5 on every input.
        let disc = zero_disc(3);
        let real = Tensor::matrix(2, 3, vec![1.0, 0.0, 1.0, 0.5, 0.5, 0.5]).unwrap();
        let fake = Tensor::matrix(2, 3, vec![0.2, 0.9, 0.4, 0.1, 0.3, 0.8]).unwrap();
        let (d, g) = gan_losses(&disc, &real, &fake).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((d - ln2).abs() < 1e-7, "disc {d}");
        assert!((g - ln2).abs() < 1e-7, "gen {g}");
    }

    #[test]
    fn near_perfect_discriminator_loss_approaches_zero() {
        // Single weight on a pixel that is 1 for real inputs and 0 for fakes,
        // with a large gain: D(real) -> 1, D(fake) -> 0.
        let mut disc = zero_disc(1);
        disc.layers[0].weight = Tensor::matrix(1, 4, vec![60.0; 4]).unwrap();
        disc.output.weight = Tensor::matrix(4, 1, vec![1.0; 4]).unwrap();
        disc.output.bias = Tensor::new(vec![1], vec![-30.0]).unwrap();
        let real = Tensor::matrix(3, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let fake = Tensor::matrix(3, 1, vec![0.0, 0.0, 0.0]).unwrap();
        let (d, _) = gan_losses(&disc, &real, &fake).unwrap();
        assert!(d < 1e-9, "disc loss {d}");
        assert!(
            (discriminator_accuracy(&disc, &real, &fake).unwrap() - 1.0).abs() < f64::EPSILON
        );
    }
}
