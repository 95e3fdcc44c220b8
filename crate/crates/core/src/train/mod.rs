//! Mini-batch training loops for the VAE, the VAE-GAN variant, and the
//! latent classifier.
//!
//! Training is a pure function of (config, data, seed): weight init, epoch
//! shuffles, and reparametrization noise all come from one ChaCha8 stream, so
//! identical runs produce bit-identical checkpoints.

pub mod checkpoint;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledImageSet;
use crate::error::{Error, Result};
use crate::models::classifier::argmax_rows;
use crate::models::{
    classify_logits_batch, encode_mu_batch, ClassifierTraining, GanGraphs, MlpArchitecture,
    MlpParams, ParamSet, VaeArchitecture, VaeParams, VaeTraining,
};
use crate::rng::seeded_rng;
use crate::tensor::{adam_step, AdamConfig, AdamState, Bindings, Tensor};

pub use checkpoint::{Checkpoint, CheckpointPayload, TrainMeta};

/// Which model a training run produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Vae,
    VaeGan,
    Classifier,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Discriminator updates per generator update (VAE-GAN only).
    pub gan_disc_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 100,
            learning_rate: 0.001,
            seed: 0,
            latent_dim: 50,
            hidden: vec![512],
            gan_disc_steps: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.latent_dim < 1 {
            return Err(Error::InvalidConfig("latent dim must be >= 1".into()));
        }
        Ok(())
    }
}

/// One epoch of the loss trace; `disc_loss` is present for VAE-GAN runs.
#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss: f64,
    pub disc_loss: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    /// CSV export: `epoch,loss[,disc_loss]`.
    pub fn to_csv(&self) -> String {
        let has_disc = self.rows.iter().any(|r| r.disc_loss.is_some());
        let mut out = String::from(if has_disc {
            "epoch,loss,disc_loss\n"
        } else {
            "epoch,loss\n"
        });
        for row in &self.rows {
            match row.disc_loss {
                Some(d) => out.push_str(&format!("{},{:.6},{:.6}\n", row.epoch, row.loss, d)),
                None => out.push_str(&format!("{},{:.6}\n", row.epoch, row.loss)),
            }
        }
        out
    }
}

fn gather_rows(data: &LabeledImageSet, indices: &[usize]) -> Tensor<f32> {
    let mut pixels = Vec::with_capacity(indices.len() * data.dim());
    for &i in indices {
        pixels.extend_from_slice(data.image(i));
    }
    Tensor::new(vec![indices.len(), data.dim()], pixels).expect("sized")
}

fn sample_normal(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let data: Vec<f32> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}

/// Train a VAE on the reconstruction objective.
pub fn train_vae(config: &TrainConfig, data: &LabeledImageSet) -> Result<(Checkpoint, LossTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data".into()));
    }
    let arch = VaeArchitecture {
        input_dim: data.dim(),
        hidden: config.hidden.clone(),
        latent_dim: config.latent_dim,
    };
    let mut rng = seeded_rng(config.seed, "train-vae");
    let mut params = VaeParams::<f32>::init(arch, &mut rng);
    let param_names = params.param_names("");
    let wrt: Vec<&str> = param_names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut graphs = HashMap::new();
    let mut trace = LossTrace::default();
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in indices.chunks(config.batch_size) {
            let n = chunk.len();
            if !graphs.contains_key(&n) {
                graphs.insert(n, VaeTraining::graph(&params, n)?);
            }
            let graph = &graphs[&n];
            let x = gather_rows(data, chunk);
            let eps = sample_normal(&mut rng, n, config.latent_dim);
            let mut bindings = Bindings::new();
            bindings.set("x", &x);
            bindings.set("eps", &eps);
            params.bind("", &mut bindings);
            let eval = graph.forward(&bindings)?;
            let loss = eval.output_scalar("loss")?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("vae training diverged at epoch {epoch}"),
                });
            }
            total += f64::from(loss) * n as f64;
            let grads = eval.backward_output("loss", &wrt)?;
            drop(eval);
            drop(bindings);
            adam_step(&mut adam, &adam_cfg, params.named_params_mut(""), &grads)?;
        }
        trace.rows.push(TraceRow {
            epoch,
            loss: total / data.len() as f64,
            disc_loss: None,
        });
    }

    let mut meta = TrainMeta::new(config.seed, config.epochs);
    if let Some(last) = trace.rows.last() {
        meta.final_losses.insert("loss".into(), last.loss);
    }
    Ok((
        Checkpoint {
            payload: CheckpointPayload::Vae(params),
            meta,
        },
        trace,
    ))
}

/// Train the VAE-GAN variant: the Bernoulli reconstruction term is replaced
/// by the non-saturating generator loss against a jointly trained
/// discriminator (alternating updates, KL term kept with equal weight).
pub fn train_vae_gan(
    config: &TrainConfig,
    data: &LabeledImageSet,
) -> Result<(Checkpoint, LossTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data".into()));
    }
    let arch = VaeArchitecture {
        input_dim: data.dim(),
        hidden: config.hidden.clone(),
        latent_dim: config.latent_dim,
    };
    let mut rng = seeded_rng(config.seed, "train-vae-gan");
    let mut vae = VaeParams::<f32>::init(arch, &mut rng);
    let mut disc = MlpParams::<f32>::init(MlpArchitecture::discriminator(data.dim()), &mut rng);
    let vae_names = vae.param_names("");
    let vae_wrt: Vec<&str> = vae_names.iter().map(String::as_str).collect();
    let disc_names = disc.param_names("disc");
    let disc_wrt: Vec<&str> = disc_names.iter().map(String::as_str).collect();

    let mut adam_gen = AdamState::new();
    let mut adam_disc = AdamState::new();
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut graphs: HashMap<usize, GanGraphs<f32>> = HashMap::new();
    let mut trace = LossTrace::default();
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let (mut gen_total, mut disc_total) = (0.0f64, 0.0f64);
        for chunk in indices.chunks(config.batch_size) {
            let n = chunk.len();
            if !graphs.contains_key(&n) {
                graphs.insert(n, GanGraphs::build(&vae, &disc, n)?);
            }
            let graph = &graphs[&n];
            let x = gather_rows(data, chunk);
            let eps = sample_normal(&mut rng, n, config.latent_dim);

            // Generator update; the same forward yields the reconstructions
            // the discriminator trains against.
            let xhat = {
                let mut bindings = Bindings::new();
                bindings.set("x", &x);
                bindings.set("eps", &eps);
                vae.bind("", &mut bindings);
                disc.bind("disc", &mut bindings);
                let eval = graph.generator.forward(&bindings)?;
                let loss = eval.output_scalar("loss")?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("vae-gan generator diverged at epoch {epoch}"),
                    });
                }
                gen_total += f64::from(loss) * n as f64;
                let grads = eval.backward_output("loss", &vae_wrt)?;
                let xhat = eval.output("xhat")?.clone();
                drop(eval);
                drop(bindings);
                adam_step(&mut adam_gen, &adam_cfg, vae.named_params_mut(""), &grads)?;
                xhat
            };

            for _ in 0..config.gan_disc_steps.max(1) {
                let mut bindings = Bindings::new();
                bindings.set("real", &x);
                bindings.set("fake", &xhat);
                disc.bind("disc", &mut bindings);
                let eval = graph.discriminator.forward(&bindings)?;
                let loss = eval.output_scalar("loss")?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("vae-gan discriminator diverged at epoch {epoch}"),
                    });
                }
                disc_total += f64::from(loss) * n as f64;
                let grads = eval.backward_output("loss", &disc_wrt)?;
                drop(eval);
                drop(bindings);
                adam_step(&mut adam_disc, &adam_cfg, disc.named_params_mut("disc"), &grads)?;
            }
        }
        trace.rows.push(TraceRow {
            epoch,
            loss: gen_total / data.len() as f64,
            disc_loss: Some(
                disc_total / (data.len() * config.gan_disc_steps.max(1)) as f64,
            ),
        });
    }

    let mut meta = TrainMeta::new(config.seed, config.epochs);
    if let Some(last) = trace.rows.last() {
        meta.final_losses.insert("loss".into(), last.loss);
        if let Some(d) = last.disc_loss {
            meta.final_losses.insert("disc_loss".into(), d);
        }
    }
    Ok((
        Checkpoint {
            payload: CheckpointPayload::VaeGan {
                vae,
                discriminator: disc,
            },
            meta,
        },
        trace,
    ))
}

/// Mean-vector latents for a whole set, computed in batches.
pub fn encode_set_latents(vae: &VaeParams<f32>, data: &LabeledImageSet) -> Result<Tensor<f32>> {
    let mut rows = Vec::with_capacity(data.len() * vae.latent_dim());
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(512) {
        let x = gather_rows(data, chunk);
        let mu = encode_mu_batch(vae, &x)?;
        rows.extend_from_slice(mu.data());
    }
    Tensor::new(vec![data.len(), vae.latent_dim()], rows)
}

/// Classification accuracy of a latent classifier over a labeled set.
pub fn classifier_accuracy(
    vae: &VaeParams<f32>,
    clf: &MlpParams<f32>,
    data: &LabeledImageSet,
) -> Result<f64> {
    let latents = encode_set_latents(vae, data)?;
    let logits = classify_logits_batch(clf, &latents)?;
    let preds = argmax_rows(&logits);
    let hits = preds
        .iter()
        .zip(data.labels())
        .filter(|&(&p, &y)| p == y as usize)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Train the latent classifier on `z = mu` with the generative model frozen.
///
/// The encoder is never touched; latents are precomputed once. Validation
/// accuracy is recorded in the checkpoint metadata when a validation set is
/// provided.
pub fn train_classifier(
    config: &TrainConfig,
    encoder: &Checkpoint,
    data: &LabeledImageSet,
    validation: Option<&LabeledImageSet>,
) -> Result<(Checkpoint, LossTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data".into()));
    }
    let vae = encoder.vae()?;
    if vae.latent_dim() != config.latent_dim {
        return Err(Error::Incompatible(format!(
            "encoder latent dim {} vs configured {}",
            vae.latent_dim(),
            config.latent_dim
        )));
    }
    let latents = encode_set_latents(vae, data)?;
    let d = vae.latent_dim();

    let mut rng = seeded_rng(config.seed, "train-classifier");
    let mut clf = MlpParams::<f32>::init(MlpArchitecture::latent_classifier(d), &mut rng);
    let clf_names = clf.param_names("clf");
    let wrt: Vec<&str> = clf_names.iter().map(String::as_str).collect();
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_learning_rate(config.learning_rate);
    let mut trace = LossTrace::default();
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        indices.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in indices.chunks(config.batch_size) {
            let n = chunk.len();
            let mut z = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for &i in chunk {
                z.extend_from_slice(latents.row_slice(i));
                labels.push(data.label(i) as usize);
            }
            let z = Tensor::new(vec![n, d], z)?;
            // Labels are baked into the fused loss op, so the step graph is
            // rebuilt per batch; it is tiny compared to the math.
            let graph = ClassifierTraining::graph(&clf, n, labels)?;
            let mut bindings = Bindings::new();
            bindings.set("z", &z);
            clf.bind("clf", &mut bindings);
            let eval = graph.forward(&bindings)?;
            let loss = eval.output_scalar("loss")?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("classifier training diverged at epoch {epoch}"),
                });
            }
            total += f64::from(loss) * n as f64;
            let grads = eval.backward_output("loss", &wrt)?;
            drop(eval);
            drop(bindings);
            adam_step(&mut adam, &adam_cfg, clf.named_params_mut("clf"), &grads)?;
        }
        trace.rows.push(TraceRow {
            epoch,
            loss: total / data.len() as f64,
            disc_loss: None,
        });
    }

    let mut meta = TrainMeta::new(config.seed, config.epochs);
    if let Some(last) = trace.rows.last() {
        meta.final_losses.insert("loss".into(), last.loss);
    }
    meta.final_losses.insert(
        "train_accuracy".into(),
        classifier_accuracy(vae, &clf, data)?,
    );
    if let Some(val) = validation {
        meta.final_losses.insert(
            "val_accuracy".into(),
            classifier_accuracy(vae, &clf, val)?,
        );
    }
    Ok((
        Checkpoint {
            payload: CheckpointPayload::Classifier(clf),
            meta,
        },
        trace,
    ))
}
