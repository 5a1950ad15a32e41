//! Frozen-encoder discriminator sanity probe: after a short warm-up of the
//! full objective, freeze everything but theta_q and check how fast the
//! content discriminator's accuracy climbs.

use srae_core::data::{generate_synthetic, sample_batch, SynthSpec};
use srae_core::model::{SraeModel, Variant};
use srae_core::rng::Rng;
use srae_core::train::{train, NullClock, TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warm_epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let disc_iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let lr_disc: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.3);

    let hy = srae_core::model::SraeHyper::desk_default();
    let mut cfg = TrainConfig::desk_default(Variant::TwoDisc);
    cfg.epochs = warm_epochs;
    cfg.lr_recon = 0.1;
    let mut spec = SynthSpec::desk_default(500, 0);
    spec.image_h = 32;
    spec.image_w = 32;
    let ds = generate_synthetic(&spec).unwrap();
    let (ckpt, _) = train(&hy, &cfg, &ds, &NullClock).unwrap();

    // Freeze the encoder; train only the discriminators.
    let mut cfg2 = TrainConfig::desk_default(Variant::TwoDisc);
    cfg2.lr_disc = lr_disc;
    let trainer = Trainer::new(hy.clone(), cfg2).unwrap();
    let model = SraeModel::new(hy.clone(), Variant::TwoDisc).unwrap();
    let mut params = ckpt.params;
    let mut rng = Rng::new(1);
    let acc = |params: &srae_core::model::ParamStore| -> f64 {
        let mut hits = 0usize;
        let n = 200;
        for i in 0..n {
            let idx = i * ds.len() / n;
            let lat = model.encode(params, &ds.images[idx], None, None).unwrap();
            let q = model.discriminate_content(params, &lat.mu_c).unwrap();
            let pred = if q.data()[0] >= q.data()[1] { 0 } else { 1 };
            if pred == ds.labels[idx] {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    };
    println!("warm-up done; disc acc before = {:.3}", acc(&params));
    for it in 0..disc_iters {
        let batch = sample_batch(&ds, 32, &mut rng).unwrap();
        let eps = trainer.draw_step_eps(&batch, &mut rng);
        let (l_qc, _) = trainer.disc_update(&mut params, &batch, &eps).unwrap();
        if (it + 1) % 50 == 0 {
            println!("iter {:4}: l_q_c={l_qc:.4} acc={:.3}", it + 1, acc(&params));
        }
    }
}
