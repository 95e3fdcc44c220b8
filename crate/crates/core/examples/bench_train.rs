use agl_core::dataset::{synth, Split};
use agl_core::train::{train_vae, train_classifier, TrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let data = synth::generate(60000, 1, Split::Train);
    let val = synth::generate(10000, 1, Split::Validation);
    println!("synth 70k: {:?}", t0.elapsed());

    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let t1 = Instant::now();
    let (vae, trace) = train_vae(&cfg, &data).unwrap();
    println!("vae 1 epoch: {:?}  loss {:.2}", t1.elapsed(), trace.rows.last().unwrap().loss);

    let t2 = Instant::now();
    let clf_cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let (clf, _) = train_classifier(&clf_cfg, &vae, &data, Some(&val)).unwrap();
    println!("classifier 5 epochs: {:?} meta {:?}", t2.elapsed(), clf.meta.final_losses);
}
