//! Latent-space classifier: a relu MLP over encoder mean vectors with a
//! 10-way softmax head.

use crate::error::Result;
use crate::models::{MlpParams, ParamMode};
use crate::tensor::graph::softmax_rows;
use crate::tensor::{Bindings, Graph, GraphBuilder, Tensor};

/// Batched logits `[n, 10]` for latent rows `[n, latent]`.
pub fn classify_logits_batch(clf: &MlpParams<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut g = GraphBuilder::new();
    let zin = g.input("z", z.shape().to_vec())?;
    let logits = clf.emit_logits(&mut g, ParamMode::Frozen, "clf", zin)?;
    g.output("logits", logits);
    let graph = g.finish();
    let mut b = Bindings::new();
    b.set("z", z);
    let eval = graph.forward(&b)?;
    Ok(eval.output("logits")?.clone())
}

/// Class probabilities for one latent vector.
pub fn classify_latent(clf: &MlpParams<f32>, z: &[f32]) -> Result<Vec<f32>> {
    let logits = classify_logits_batch(clf, &Tensor::row(z.to_vec()))?;
    Ok(softmax_rows(&logits).into_data())
}

/// Row-wise argmax with ties broken toward the lowest class index.
pub fn argmax_rows(t: &Tensor<f32>) -> Vec<usize> {
    let cols = t.cols();
    t.data()
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Training-step graph: input `z` plus trainable classifier parameters,
/// labels baked per batch; output `loss` is the mean cross-entropy.
pub struct ClassifierTraining;

impl ClassifierTraining {
    pub fn graph(clf: &MlpParams<f32>, batch: usize, labels: Vec<usize>) -> Result<Graph<f32>> {
        let mut g = GraphBuilder::new();
        let z = g.input("z", vec![batch, clf.arch.input_dim])?;
        let logits = clf.emit_logits(&mut g, ParamMode::Trainable, "clf", z)?;
        let ce = g.softmax_xent(logits, labels)?;
        let loss = g.scale(ce, 1.0 / batch as f32);
        g.output("loss", loss);
        Ok(g.finish())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MlpArchitecture, ParamSet};
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn zero_classifier(latent: usize) -> MlpParams<f32> {
        let mut p = MlpParams::init(
            MlpArchitecture::latent_classifier(latent),
            &mut seeded_rng(0, "init"),
        );
        p.visit_mut("", &mut |_, t| {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        });
        p
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let clf = zero_classifier(5);
        let probs = classify_latent(&clf, &[0.4, -0.2, 1.0, 0.0, 2.5]).unwrap();
        assert_eq!(probs.len(), 10);
        for &p in &probs {
            assert!((p - 0.1).abs() < 1e-7);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let clf = MlpParams::init(
            MlpArchitecture::latent_classifier(6),
            &mut seeded_rng(9, "init"),
        );
        let mut rng = seeded_rng(10, "z");
        for _ in 0..50 {
            let z: Vec<f32> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let probs = classify_latent(&clf, &z).unwrap();
            let sum: f32 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn argmax_invariant_to_constant_logit_shift() {
        let logits = Tensor::matrix(2, 4, vec![0.3, -0.1, 2.0, 1.9, -5.0, -4.0, -6.0, -4.5]).unwrap();
        let shifted = logits.map(|v| v + 37.25);
        assert_eq!(argmax_rows(&logits), argmax_rows(&shifted));
    }

    #[test]
    fn argmax_ties_break_low() {
        let t = Tensor::matrix(1, 4, vec![1.0, 7.0, 7.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1]);
    }
}
