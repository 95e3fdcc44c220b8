//! Targeted adversarial attacks on the generative model.
//!
//! Three attack losses, each differentiated through the frozen model with
//! respect to the adversarial image:
//!
//! * classifier: cross-entropy of the latent classifier's prediction for
//!   `encode_mu(x*)` against the target class;
//! * vae: the VAE objective with the reconstruction target swapped to a
//!   precomputed `xhat_t` (requires a full decode every step);
//! * latent: squared L2 distance between `encode_mu(x*)` and a target latent
//!   vector, plus an untargeted variant that pushes away from the source
//!   encoding (unbounded below; expected to fail to produce a usable
//!   adversarial example, which the report surfaces rather than hides).
//!
//! Two solvers: Adam descent on `lambda * ||x - x*||^2 + loss` with clipping
//! after every step, and single-step fast gradient sign.
//!
//! Attacks always run against the mean latent vector (no sampling).

use rand::Rng;

use crate::dataset::LabeledImageSet;
use crate::error::{Error, Result};
use crate::models::vae::kl_sum_node;
use crate::models::{MlpParams, ParamMode, VaeParams};
use crate::rng::seeded_rng;
use crate::tensor::{
    adam_step, AdamConfig, AdamState, Bindings, Graph, GraphBuilder, Gradients, Real, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackLossKind {
    Classifier,
    Vae,
    Latent,
    LatentUntargeted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    L2Opt,
    Fgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipPolicy {
    /// Clip the adversarial image into `[0, 1]` after every step.
    Unit,
    /// No clipping (ablation only).
    Unclipped,
}

/// What the attack drives the model toward.
#[derive(Clone, Debug, PartialEq)]
pub enum AttackTarget {
    ClassLabel(usize),
    LatentVector(Vec<f32>),
    ReconstructionImage(Vec<f32>),
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AttackConfig {
    pub loss: AttackLossKind,
    pub solver: Solver,
    pub lambda: f32,
    pub step_size: f32,
    pub iterations: usize,
    /// FGS perturbation magnitude.
    pub epsilon: f32,
    pub clip: ClipPolicy,
    pub seed: u64,
}

impl AttackConfig {
    /// Reference hyperparameters per attack loss: lambda 0.001 for the
    /// classifier loss and 1.0 for the others, step size 0.1, 1000 steps.
    pub fn defaults_for(loss: AttackLossKind) -> Self {
        AttackConfig {
            loss,
            solver: Solver::L2Opt,
            lambda: match loss {
                AttackLossKind::Classifier => 0.001,
                _ => 1.0,
            },
            step_size: 0.1,
            iterations: 1000,
            epsilon: 0.1,
            clip: ClipPolicy::Unit,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.epsilon < 0.0 {
            return Err(Error::InvalidConfig("epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-example batched target payloads.
#[derive(Clone, Debug)]
pub enum BatchTargets<F: Real> {
    None,
    Classes(Vec<usize>),
    Latents(Tensor<F>),
    Reconstructions(Tensor<F>),
}

impl BatchTargets<f32> {
    /// Validate per-example targets against the loss kind and model dims.
    pub fn build(
        loss: AttackLossKind,
        targets: &[AttackTarget],
        count: usize,
        vae: &VaeParams<f32>,
    ) -> Result<Self> {
        if loss == AttackLossKind::LatentUntargeted {
            if !targets.is_empty() {
                return Err(Error::InvalidConfig(
                    "untargeted latent attack takes no targets".into(),
                ));
            }
            return Ok(BatchTargets::None);
        }
        if targets.len() != count {
            return Err(Error::InvalidConfig(format!(
                "{} targets for {} source examples",
                targets.len(),
                count
            )));
        }
        match loss {
            AttackLossKind::Classifier => {
                let mut classes = Vec::with_capacity(count);
                for t in targets {
                    match t {
                        AttackTarget::ClassLabel(c) if *c < 10 => classes.push(*c),
                        AttackTarget::ClassLabel(c) => return Err(Error::ClassOutOfRange(*c, 10)),
                        _ => {
                            return Err(Error::InvalidConfig(
                                "classifier attack needs class-label targets".into(),
                            ))
                        }
                    }
                }
                Ok(BatchTargets::Classes(classes))
            }
            AttackLossKind::Latent => {
                let d = vae.latent_dim();
                let mut rows = Vec::with_capacity(count * d);
                for t in targets {
                    match t {
                        AttackTarget::LatentVector(z) if z.len() == d => rows.extend_from_slice(z),
                        AttackTarget::LatentVector(z) => {
                            return Err(Error::ShapeMismatch {
                                node: "latent target".into(),
                                detail: format!("length {} vs latent dim {}", z.len(), d),
                            })
                        }
                        _ => {
                            return Err(Error::InvalidConfig(
                                "latent attack needs latent-vector targets".into(),
                            ))
                        }
                    }
                }
                Ok(BatchTargets::Latents(Tensor::new(vec![count, d], rows)?))
            }
            AttackLossKind::Vae => {
                let d = vae.input_dim();
                let mut rows = Vec::with_capacity(count * d);
                for t in targets {
                    match t {
                        AttackTarget::ReconstructionImage(x) if x.len() == d => {
                            rows.extend_from_slice(x)
                        }
                        AttackTarget::ReconstructionImage(x) => {
                            return Err(Error::ShapeMismatch {
                                node: "reconstruction target".into(),
                                detail: format!("length {} vs input dim {}", x.len(), d),
                            })
                        }
                        _ => {
                            return Err(Error::InvalidConfig(
                                "vae attack needs reconstruction-image targets".into(),
                            ))
                        }
                    }
                }
                Ok(BatchTargets::Reconstructions(Tensor::new(
                    vec![count, d],
                    rows,
                )?))
            }
            AttackLossKind::LatentUntargeted => unreachable!(),
        }
    }

    pub fn cast<G: Real>(&self) -> BatchTargets<G> {
        match self {
            BatchTargets::None => BatchTargets::None,
            BatchTargets::Classes(c) => BatchTargets::Classes(c.clone()),
            BatchTargets::Latents(t) => BatchTargets::Latents(t.cast()),
            BatchTargets::Reconstructions(t) => BatchTargets::Reconstructions(t.cast()),
        }
    }
}

/// Build the attack objective graph for a batch of source images.
///
/// Input `x_adv` `[n, input]`; outputs `objective` (`lambda * distance +
/// adv`), `distance` (summed squared L2 to the sources), and `adv` (the
/// attack loss summed over the batch). This is the exact graph both solvers
/// differentiate, and the one the gradient-check suites probe.
pub fn build_attack_graph<F: Real>(
    vae: &VaeParams<F>,
    classifier: Option<&MlpParams<F>>,
    loss: AttackLossKind,
    targets: &BatchTargets<F>,
    x_src: &Tensor<F>,
    lambda: F,
) -> Result<Graph<F>> {
    let n = x_src.rows();
    let mut g = GraphBuilder::new();
    let x_adv = g.input("x_adv", x_src.shape().to_vec())?;
    let src = g.constant(x_src.clone());
    let diff = g.sub(x_adv, src)?;
    let sq = g.square(diff);
    let distance = g.sum(sq);

    let enc = vae.emit_encoder(&mut g, ParamMode::Frozen)?;
    let (mu, log_var) = enc.forward(&mut g, x_adv)?;

    let adv = match (loss, targets) {
        (AttackLossKind::Classifier, BatchTargets::Classes(classes)) => {
            let clf = classifier.ok_or_else(|| {
                Error::Incompatible("classifier attack without a classifier checkpoint".into())
            })?;
            if clf.arch.input_dim != vae.latent_dim() {
                return Err(Error::Incompatible(format!(
                    "classifier expects {}-dim latents, encoder produces {}",
                    clf.arch.input_dim,
                    vae.latent_dim()
                )));
            }
            let logits = clf.emit_logits(&mut g, ParamMode::Frozen, "clf", mu)?;
            g.softmax_xent(logits, classes.clone())?
        }
        (AttackLossKind::Vae, BatchTargets::Reconstructions(xhat_t)) => {
            let kl = kl_sum_node(&mut g, mu, log_var, n * vae.latent_dim())?;
            let dec = vae.emit_decoder(&mut g, ParamMode::Frozen)?;
            // Mean latent vector: the attack decodes mu, not a sample.
            let logits = dec.logits(&mut g, mu)?;
            let t = g.constant(xhat_t.clone());
            let ce = g.bernoulli_xent(logits, t)?;
            g.add(kl, ce)?
        }
        (AttackLossKind::Latent, BatchTargets::Latents(z_t)) => {
            let t = g.constant(z_t.clone());
            let d = g.sub(t, mu)?;
            let sq = g.square(d);
            g.sum(sq)
        }
        (AttackLossKind::LatentUntargeted, BatchTargets::None) => {
            // Distance to the source encoding, maximized by minimizing its
            // negation. The source encoding enters as a constant.
            let z_src = {
                let mut eg = GraphBuilder::new();
                let xs = eg.input("x", x_src.shape().to_vec())?;
                let enc = vae.emit_encoder(&mut eg, ParamMode::Frozen)?;
                let (mu_s, _) = enc.forward(&mut eg, xs)?;
                eg.output("mu", mu_s);
                let graph = eg.finish();
                let mut b = Bindings::new();
                b.set("x", x_src);
                graph.forward(&b)?.output("mu")?.clone()
            };
            let t = g.constant(z_src);
            let d = g.sub(t, mu)?;
            let sq = g.square(d);
            let dist = g.sum(sq);
            g.scale(dist, -F::one())
        }
        (kind, _) => {
            return Err(Error::InvalidConfig(format!(
                "target payload does not match attack loss {kind:?}"
            )))
        }
    };

    let weighted = g.scale(distance, lambda);
    let objective = g.add(weighted, adv)?;
    g.output("objective", objective);
    g.output("distance", distance);
    g.output("adv", adv);
    Ok(g.finish())
}

/// One attacked example with its final loss terms.
#[derive(Clone, Debug)]
pub struct AdversarialExample {
    pub source: Vec<f32>,
    pub adversarial: Vec<f32>,
    /// Squared L2 distance between source and adversarial image.
    pub distance_term: f64,
    /// Final value of the attack loss for this example.
    pub adversarial_term: f64,
    pub iterations: usize,
}

/// Frozen model pieces an attack differentiates through.
#[derive(Clone, Copy)]
pub struct AttackModel<'a> {
    pub vae: &'a VaeParams<f32>,
    pub classifier: Option<&'a MlpParams<f32>>,
}

fn clip_unit(x: &mut Tensor<f32>) {
    for v in x.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Per-example squared L2 distances between rows.
fn row_sq_distances(a: &Tensor<f32>, b: &Tensor<f32>) -> Vec<f64> {
    let cols = a.cols();
    a.data()
        .chunks(cols)
        .zip(b.data().chunks(cols))
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum()
        })
        .collect()
}

/// Per-example values of an attack loss at `x` (evaluation side, f64).
pub fn per_example_losses(
    model: &AttackModel<'_>,
    loss: AttackLossKind,
    targets: &BatchTargets<f32>,
    x: &Tensor<f32>,
    x_src: &Tensor<f32>,
) -> Result<Vec<f64>> {
    use crate::models::{classify_logits_batch, decode_batch, encode_batch};
    let (mu, log_var) = encode_batch(model.vae, x)?;
    match (loss, targets) {
        (AttackLossKind::Classifier, BatchTargets::Classes(classes)) => {
            let clf = model.classifier.ok_or_else(|| {
                Error::Incompatible("classifier attack without a classifier checkpoint".into())
            })?;
            let logits = classify_logits_batch(clf, &mu)?;
            let cols = logits.cols();
            Ok(logits
                .data()
                .chunks(cols)
                .zip(classes)
                .map(|(row, &y)| {
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let lse = f64::from(max)
                        + row.iter().map(|&v| f64::from(v - max).exp()).sum::<f64>().ln();
                    lse - f64::from(row[y])
                })
                .collect())
        }
        (AttackLossKind::Vae, BatchTargets::Reconstructions(xhat_t)) => {
            let xhat = decode_batch(model.vae, &mu)?;
            let d = model.vae.latent_dim();
            let cols = xhat.cols();
            Ok((0..x.rows())
                .map(|i| {
                    let kl: f64 = (0..d)
                        .map(|j| {
                            let m = f64::from(mu.data()[i * d + j]);
                            let lv = f64::from(log_var.data()[i * d + j]);
                            0.5 * (m * m + lv.exp() - lv - 1.0)
                        })
                        .sum();
                    let ce = crate::models::vae::bernoulli_ce(
                        &xhat_t.data()[i * cols..(i + 1) * cols],
                        &xhat.data()[i * cols..(i + 1) * cols],
                    );
                    kl + ce
                })
                .collect())
        }
        (AttackLossKind::Latent, BatchTargets::Latents(z_t)) => Ok(row_sq_distances(z_t, &mu)),
        (AttackLossKind::LatentUntargeted, BatchTargets::None) => {
            let (mu_src, _) = encode_batch(model.vae, x_src)?;
            Ok(row_sq_distances(&mu_src, &mu)
                .into_iter()
                .map(|d| -d)
                .collect())
        }
        (kind, _) => Err(Error::InvalidConfig(format!(
            "target payload does not match attack loss {kind:?}"
        ))),
    }
}

fn finalize(
    model: &AttackModel<'_>,
    loss: AttackLossKind,
    targets: &BatchTargets<f32>,
    x_src: &Tensor<f32>,
    x_adv: &Tensor<f32>,
    iterations: usize,
) -> Result<Vec<AdversarialExample>> {
    let adv_terms = per_example_losses(model, loss, targets, x_adv, x_src)?;
    let dists = row_sq_distances(x_src, x_adv);
    Ok((0..x_src.rows())
        .map(|i| AdversarialExample {
            source: x_src.row_slice(i).to_vec(),
            adversarial: x_adv.row_slice(i).to_vec(),
            distance_term: dists[i],
            adversarial_term: adv_terms[i],
            iterations,
        })
        .collect())
}

/// Adam-based minimization of `lambda * ||x - x*||^2 + loss` over the
/// adversarial batch, starting from the source images.
///
/// With `iterations == 0` the result is exactly the source batch. The
/// untargeted latent loss is seeded with a tiny perturbation (its gradient
/// at the source images is identically zero); every other loss starts
/// bit-exactly at the sources.
pub fn attack_l2opt(
    model: &AttackModel<'_>,
    x_src: &Tensor<f32>,
    targets: &[AttackTarget],
    config: &AttackConfig,
) -> Result<Vec<AdversarialExample>> {
    config.validate()?;
    let batch = BatchTargets::build(config.loss, targets, x_src.rows(), model.vae)?;
    let graph = build_attack_graph(
        model.vae,
        model.classifier,
        config.loss,
        &batch,
        x_src,
        config.lambda,
    )?;

    let mut x = x_src.clone();
    if config.iterations > 0 && config.loss == AttackLossKind::LatentUntargeted {
        let mut rng = seeded_rng(config.seed, "untargeted-init");
        for v in x.data_mut() {
            *v += rng.random_range(-1e-3..1e-3);
        }
        if config.clip == ClipPolicy::Unit {
            clip_unit(&mut x);
        }
    }

    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig::with_learning_rate(config.step_size);
    for it in 0..config.iterations {
        let grads: Gradients<f32> = {
            let mut b = Bindings::new();
            b.set("x_adv", &x);
            let eval = graph.forward(&b)?;
            let objective = eval.output_scalar("objective")?;
            if !objective.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("attack objective at iteration {it}"),
                });
            }
            eval.backward_output("objective", &["x_adv"])?
        };
        adam_step(
            &mut adam,
            &adam_cfg,
            [("x_adv".to_string(), &mut x)],
            &grads,
        )?;
        if config.clip == ClipPolicy::Unit {
            clip_unit(&mut x);
        }
    }
    finalize(model, config.loss, &batch, x_src, &x, config.iterations)
}

/// Single-step fast gradient sign on the attack loss: descend
/// `x* = clip(x - eps * sign(grad))`. Zero-gradient coordinates step in the
/// positive direction so every pre-clip coordinate moves by exactly `eps`.
pub fn attack_fgs(
    model: &AttackModel<'_>,
    x_src: &Tensor<f32>,
    targets: &[AttackTarget],
    config: &AttackConfig,
) -> Result<Vec<AdversarialExample>> {
    config.validate()?;
    let batch = BatchTargets::build(config.loss, targets, x_src.rows(), model.vae)?;
    // Gradient of the attack loss alone; the distance term vanishes at the
    // source images anyway.
    let graph = build_attack_graph(
        model.vae,
        model.classifier,
        config.loss,
        &batch,
        x_src,
        0.0,
    )?;
    let grads = {
        let mut b = Bindings::new();
        b.set("x_adv", x_src);
        let eval = graph.forward(&b)?;
        let adv = eval.output_scalar("adv")?;
        if !adv.is_finite() {
            return Err(Error::NonFinite {
                context: "fgs attack loss".into(),
            });
        }
        eval.backward_output("adv", &["x_adv"])?
    };
    let grad = grads.get("x_adv")?;
    let mut x = x_src.clone();
    for (v, &g) in x.data_mut().iter_mut().zip(grad.data()) {
        let sign = if g < 0.0 { -1.0 } else { 1.0 };
        *v -= config.epsilon * sign;
    }
    if config.clip == ClipPolicy::Unit {
        clip_unit(&mut x);
    }
    finalize(model, config.loss, &batch, x_src, &x, 1)
}

/// Dispatch on the configured solver.
pub fn run_attack(
    model: &AttackModel<'_>,
    x_src: &Tensor<f32>,
    targets: &[AttackTarget],
    config: &AttackConfig,
) -> Result<Vec<AdversarialExample>> {
    match config.solver {
        Solver::L2Opt => attack_l2opt(model, x_src, targets, config),
        Solver::Fgs => attack_fgs(model, x_src, targets, config),
    }
}

/// Arithmetic mean of the encoder mean vectors over a set of examples.
pub fn mean_latent_target(vae: &VaeParams<f32>, examples: &LabeledImageSet) -> Result<Vec<f32>> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("mean latent target examples".into()));
    }
    let mu = crate::models::encode_mu_batch(vae, &examples.to_tensor())?;
    let d = vae.latent_dim();
    let mut acc = vec![0.0f64; d];
    for row in mu.data().chunks(d) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let n = examples.len() as f64;
    Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// Mean latent vector of every example of class `y_t` in `data`.
pub fn class_subset_target(
    vae: &VaeParams<f32>,
    data: &LabeledImageSet,
    y_t: u8,
) -> Result<Vec<f32>> {
    let subset = crate::dataset::filter_by_class(data, y_t);
    if subset.is_empty() {
        return Err(Error::EmptyInput(format!("no examples of class {y_t}")));
    }
    mean_latent_target(vae, &subset)
}

/// Single-image eval-side losses mirroring the batched attack objectives.
pub fn loss_classifier(
    classifier: &MlpParams<f32>,
    vae: &VaeParams<f32>,
    x_adv: &[f32],
    y_t: usize,
) -> Result<f64> {
    if y_t >= 10 {
        return Err(Error::ClassOutOfRange(y_t, 10));
    }
    let model = AttackModel {
        vae,
        classifier: Some(classifier),
    };
    let x = Tensor::row(x_adv.to_vec());
    Ok(per_example_losses(
        &model,
        AttackLossKind::Classifier,
        &BatchTargets::Classes(vec![y_t]),
        &x,
        &x,
    )?[0])
}

pub fn loss_vae_target(vae: &VaeParams<f32>, x_adv: &[f32], xhat_t: &[f32]) -> Result<f64> {
    let model = AttackModel {
        vae,
        classifier: None,
    };
    let x = Tensor::row(x_adv.to_vec());
    let t = Tensor::row(xhat_t.to_vec());
    Ok(per_example_losses(
        &model,
        AttackLossKind::Vae,
        &BatchTargets::Reconstructions(t),
        &x,
        &x,
    )?[0])
}

pub fn loss_latent(vae: &VaeParams<f32>, x_adv: &[f32], z_t: &[f32]) -> Result<f64> {
    let model = AttackModel {
        vae,
        classifier: None,
    };
    let x = Tensor::row(x_adv.to_vec());
    let t = Tensor::row(z_t.to_vec());
    Ok(per_example_losses(
        &model,
        AttackLossKind::Latent,
        &BatchTargets::Latents(t),
        &x,
        &x,
    )?[0])
}

pub fn loss_latent_untargeted(vae: &VaeParams<f32>, x_adv: &[f32], x_src: &[f32]) -> Result<f64> {
    let model = AttackModel {
        vae,
        classifier: None,
    };
    let x = Tensor::row(x_adv.to_vec());
    let src = Tensor::row(x_src.to_vec());
    Ok(per_example_losses(
        &model,
        AttackLossKind::LatentUntargeted,
        &BatchTargets::None,
        &x,
        &src,
    )?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{encode, MlpArchitecture, ParamSet, VaeArchitecture};
    use crate::rng::seeded_rng;

    fn tiny_vae() -> VaeParams<f32> {
        VaeParams::init(
            VaeArchitecture {
                input_dim: 6,
                hidden: vec![5],
                latent_dim: 3,
            },
            &mut seeded_rng(17, "init"),
        )
    }

    fn x_src() -> Tensor<f32> {
        Tensor::row(vec![0.1, 0.9, 0.4, 0.6, 0.0, 1.0])
    }

    #[test]
    fn uniform_classifier_costs_ln10() {
        let vae = tiny_vae();
        let mut clf = MlpParams::init(
            MlpArchitecture::latent_classifier(3),
            &mut seeded_rng(0, "init"),
        );
        clf.visit_mut("", &mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        });
        let loss = loss_classifier(&clf, &vae, x_src().data(), 4).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_classifier_costs_nothing() {
        let vae = tiny_vae();
        let mut clf = MlpParams::init(
            MlpArchitecture::latent_classifier(3),
            &mut seeded_rng(0, "init"),
        );
        clf.visit_mut("", &mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        });
        // Bias the output head hard toward class 7.
        clf.output.bias.data_mut()[7] = 40.0;
        let loss = loss_classifier(&clf, &vae, x_src().data(), 7).unwrap();
        assert!(loss < 1e-9, "{loss}");
    }

    #[test]
    fn class_out_of_range_is_rejected() {
        let vae = tiny_vae();
        let clf = MlpParams::init(
            MlpArchitecture::latent_classifier(3),
            &mut seeded_rng(0, "init"),
        );
        assert!(matches!(
            loss_classifier(&clf, &vae, x_src().data(), 11),
            Err(Error::ClassOutOfRange(11, 10))
        ));
    }

    #[test]
    fn latent_loss_zero_at_own_encoding_and_one_at_unit_offset() {
        let vae = tiny_vae();
        let x = x_src();
        let dist = encode(&vae, x.data()).unwrap();
        let loss = loss_latent(&vae, x.data(), &dist.mu).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");

        let mut z_off = dist.mu.clone();
        z_off[0] += 1.0;
        let loss = loss_latent(&vae, x.data(), &z_off).unwrap();
        assert!((loss - 1.0).abs() < 1e-5, "{loss}");
    }

    #[test]
    fn vae_target_loss_minimum_is_self_entropy() {
        let vae = tiny_vae();
        let x = x_src();
        let mut rng = seeded_rng(0, "recon");
        let xhat_t = crate::models::reconstruct(&vae, x.data(), 0, &mut rng).unwrap();
        let dist = encode(&vae, x.data()).unwrap();
        let loss = loss_vae_target(&vae, x.data(), &xhat_t).unwrap();
        let self_entropy = crate::models::vae::bernoulli_ce(&xhat_t, &xhat_t);
        let kl = crate::models::kl_gaussian(&dist);
        assert!(
            (loss - (kl + self_entropy)).abs() < 1e-6,
            "loss {loss} vs kl {kl} + H {self_entropy}"
        );
    }

    #[test]
    fn cross_entropy_gibbs_inequality() {
        let vae = tiny_vae();
        let x = x_src();
        let mut rng = seeded_rng(0, "recon");
        let xhat_t = crate::models::reconstruct(&vae, x.data(), 0, &mut rng).unwrap();
        let h_t = crate::models::vae::bernoulli_ce(&xhat_t, &xhat_t);
        let mut probe_rng = seeded_rng(3, "probe");
        for _ in 0..50 {
            let probe: Vec<f32> = (0..6).map(|_| probe_rng.random_range(0.0..1.0)).collect();
            let xhat_probe = crate::models::reconstruct(&vae, &probe, 0, &mut probe_rng).unwrap();
            let ce = crate::models::vae::bernoulli_ce(&xhat_t, &xhat_probe);
            assert!(ce >= h_t - 1e-9, "Gibbs violated: {ce} < {h_t}");
        }
    }

    #[test]
    fn untargeted_loss_zero_at_source() {
        let vae = tiny_vae();
        let x = x_src();
        let loss = loss_latent_untargeted(&vae, x.data(), x.data()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn untargeted_descent_grows_latent_distance() {
        // At a point away from the stationary source, one small step along
        // the negative gradient must decrease the loss (grow the distance).
        let vae = tiny_vae();
        let src = x_src();
        let mut x = src.clone();
        x.data_mut()[0] += 0.05;
        let graph = build_attack_graph(
            &vae,
            None,
            AttackLossKind::LatentUntargeted,
            &BatchTargets::None,
            &src,
            0.0,
        )
        .unwrap();
        let (before, g) = {
            let mut b = Bindings::new();
            b.set("x_adv", &x);
            let eval = graph.forward(&b).unwrap();
            let before = eval.output_scalar("adv").unwrap();
            let grads = eval.backward_output("adv", &["x_adv"]).unwrap();
            (before, grads.get("x_adv").unwrap().clone())
        };
        let step = 1e-3f32;
        for (v, &gv) in x.data_mut().iter_mut().zip(g.data()) {
            *v -= step * gv;
        }
        let mut b = Bindings::new();
        b.set("x_adv", &x);
        let eval = graph.forward(&b).unwrap();
        let after = eval.output_scalar("adv").unwrap();
        assert!(after < before, "descent failed: {after} vs {before}");
    }

    #[test]
    fn mean_latent_target_cases() {
        let vae = tiny_vae();
        let one = crate::dataset::LabeledImageSet::new(
            x_src().data().to_vec(),
            6,
            vec![3],
            crate::dataset::Split::Train,
        )
        .unwrap();
        let single = mean_latent_target(&vae, &one).unwrap();
        let direct = encode(&vae, x_src().data()).unwrap().mu;
        for (a, b) in single.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-7);
        }

        // Two identical examples: same mean.
        let mut px = x_src().data().to_vec();
        px.extend_from_slice(x_src().data());
        let two =
            crate::dataset::LabeledImageSet::new(px, 6, vec![3, 3], crate::dataset::Split::Train)
                .unwrap();
        let double = mean_latent_target(&vae, &two).unwrap();
        for (a, b) in double.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn mean_latent_matches_f64_oracle() {
        let vae = tiny_vae();
        let mut rng = seeded_rng(5, "data");
        let n = 40;
        let pixels: Vec<f32> = (0..n * 6).map(|_| rng.random_range(0.0..1.0)).collect();
        let set = crate::dataset::LabeledImageSet::new(
            pixels,
            6,
            vec![0; n],
            crate::dataset::Split::Train,
        )
        .unwrap();
        let got = mean_latent_target(&vae, &set).unwrap();
        // Independent oracle: encode one-by-one, accumulate in f64.
        let mut acc = vec![0.0f64; 3];
        for i in 0..n {
            let d = encode(&vae, set.image(i)).unwrap();
            for (a, &m) in acc.iter_mut().zip(&d.mu) {
                *a += f64::from(m);
            }
        }
        for (g, a) in got.iter().zip(&acc) {
            assert!((f64::from(*g) - a / n as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn class_subset_target_rejects_missing_class() {
        let vae = tiny_vae();
        let mut rng = seeded_rng(5, "data");
        let pixels: Vec<f32> = (0..12).map(|_| rng.random_range(0.0..1.0)).collect();
        let set = crate::dataset::LabeledImageSet::new(
            pixels,
            6,
            vec![1, 1],
            crate::dataset::Split::Train,
        )
        .unwrap();
        assert!(matches!(
            class_subset_target(&vae, &set, 4),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn l2opt_zero_iterations_is_identity() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let z_t = vec![0.5f32, -0.5, 0.25];
        let mut cfg = AttackConfig::defaults_for(AttackLossKind::Latent);
        cfg.iterations = 0;
        let out = attack_l2opt(&model, &x, &[AttackTarget::LatentVector(z_t)], &cfg).unwrap();
        assert_eq!(out[0].adversarial, x.data());
        assert_eq!(out[0].distance_term, 0.0);
        assert_eq!(out[0].iterations, 0);
    }

    #[test]
    fn l2opt_stays_put_at_its_own_minimizer() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let z_t = encode(&vae, x.data()).unwrap().mu;
        let mut cfg = AttackConfig::defaults_for(AttackLossKind::Latent);
        cfg.lambda = 0.0;
        cfg.iterations = 25;
        let out = attack_l2opt(&model, &x, &[AttackTarget::LatentVector(z_t)], &cfg).unwrap();
        // Objective starts at its global minimum 0; gradient is exactly zero
        // so the iterate never moves.
        assert_eq!(out[0].adversarial, x.data());
        assert!(out[0].adversarial_term.abs() < 1e-12);
    }

    #[test]
    fn solvers_are_deterministic() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let cfg = AttackConfig {
            iterations: 40,
            ..AttackConfig::defaults_for(AttackLossKind::Latent)
        };
        let t = [AttackTarget::LatentVector(vec![0.4, -1.0, 0.2])];
        let a = attack_l2opt(&model, &x, &t, &cfg).unwrap();
        let b = attack_l2opt(&model, &x, &t, &cfg).unwrap();
        assert_eq!(a[0].adversarial, b[0].adversarial);

        let mut fgs_cfg = cfg.clone();
        fgs_cfg.solver = Solver::Fgs;
        let fa = attack_fgs(&model, &x, &t, &fgs_cfg).unwrap();
        let fb = attack_fgs(&model, &x, &t, &fgs_cfg).unwrap();
        assert_eq!(fa[0].adversarial, fb[0].adversarial);
    }

    #[test]
    fn fgs_cases() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let t = [AttackTarget::LatentVector(vec![0.4, -1.0, 0.2])];

        // epsilon 0: identity.
        let mut cfg = AttackConfig::defaults_for(AttackLossKind::Latent);
        cfg.solver = Solver::Fgs;
        cfg.epsilon = 0.0;
        let out = attack_fgs(&model, &x, &t, &cfg).unwrap();
        assert_eq!(out[0].adversarial, x.data());

        // Pre-clip perturbation has every coordinate at exactly epsilon.
        cfg.epsilon = 0.05;
        cfg.clip = ClipPolicy::Unclipped;
        let out = attack_fgs(&model, &x, &t, &cfg).unwrap();
        for (a, s) in out[0].adversarial.iter().zip(x.data()) {
            assert!(((a - s).abs() - 0.05).abs() < 1e-7);
        }
    }

    #[test]
    fn l2opt_clip_keeps_unit_range() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let cfg = AttackConfig {
            iterations: 60,
            step_size: 0.3,
            ..AttackConfig::defaults_for(AttackLossKind::Latent)
        };
        let t = [AttackTarget::LatentVector(vec![5.0, -5.0, 5.0])];
        let out = attack_l2opt(&model, &x, &t, &cfg).unwrap();
        assert!(out[0].adversarial.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn mismatched_targets_are_rejected() {
        let vae = tiny_vae();
        let model = AttackModel {
            vae: &vae,
            classifier: None,
        };
        let x = x_src();
        let cfg = AttackConfig::defaults_for(AttackLossKind::Latent);
        let err = attack_l2opt(&model, &x, &[AttackTarget::ClassLabel(3)], &cfg).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));

        let err = attack_l2opt(
            &model,
            &x,
            &[AttackTarget::LatentVector(vec![0.0; 7])],
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
