use srae_core::data::{generate_synthetic, Dataset, SynthSpec};
use srae_core::model::{SraeModel, Variant};
use srae_core::tasks::{encode_dataset, fit_domain_classifier};
use srae_core::train::{train_with_snapshots, NullClock, TrainConfig};
use srae_core::Tensor;

fn probe(ds: &Dataset, ckpt: &srae_core::checkpoint::Checkpoint) -> (f32, f32) {
    let model = SraeModel::new(ckpt.hyper.clone(), ckpt.variant).unwrap();
    // subset for speed: 150 per domain
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for d in 0..ds.m {
        for &i in ds.domain_indices(d).iter().take(150) {
            images.push(ds.images[i].clone());
            labels.push(d);
        }
    }
    let sub = Dataset { images, labels, m: ds.m, descriptors: None };
    let recs = encode_dataset(&model, &ckpt.params, &sub).unwrap();
    let zd: Vec<Vec<f32>> = recs.iter().map(|r| r.z_d.clone()).collect();
    let zc: Vec<Vec<f32>> = recs.iter().map(|r| r.z_c.clone()).collect();
    let ls: Vec<usize> = recs.iter().map(|r| r.domain).collect();
    let a_d = fit_domain_classifier(&zd, &ls, 2, 0).unwrap().test_accuracy;
    let a_c = fit_domain_classifier(&zc, &ls, 2, 0).unwrap().test_accuracy;

    // Diagnostics: per-dim domain separation of mu_c and the trained
    // discriminator's own accuracy on mean codes.
    let dim = zc[0].len();
    let n_a = ls.iter().filter(|&&l| l == 0).count();
    let n_b = ls.len() - n_a;
    let mut worst_sep = 0.0f64;
    let mut rms = 0.0f64;
    for d in 0..dim {
        let (mut ma, mut mb) = (0.0f64, 0.0f64);
        for (v, &l) in zc.iter().zip(&ls) {
            if l == 0 { ma += v[d] as f64 } else { mb += v[d] as f64 }
        }
        ma /= n_a as f64;
        mb /= n_b as f64;
        let mut var = 0.0f64;
        for (v, &l) in zc.iter().zip(&ls) {
            let m = if l == 0 { ma } else { mb };
            var += (v[d] as f64 - m).powi(2);
        }
        let sd = (var / ls.len() as f64).sqrt().max(1e-12);
        worst_sep = worst_sep.max((ma - mb).abs() / sd);
        for v in &zc { rms += (v[d] as f64).powi(2); }
    }
    rms = (rms / (zc.len() * dim) as f64).sqrt();
    let mut disc_hits = 0usize;
    for (v, &l) in zc.iter().zip(&ls) {
        let z = Tensor::from_vec(vec![ckpt.hyper.a, ckpt.hyper.b, ckpt.hyper.k], v.clone()).unwrap();
        let q = model.discriminate_content(&ckpt.params, &z).unwrap();
        let pred = if q.data()[0] >= q.data()[1] { 0 } else { 1 };
        if pred == l { disc_hits += 1 }
    }
    // Multivariate leak: Mahalanobis distance of the two domain means under
    // the pooled covariance, i.e. what an optimal linear probe sees.
    let mut mean_a = vec![0.0f64; dim];
    let mut mean_b = vec![0.0f64; dim];
    for (v, &l) in zc.iter().zip(&ls) {
        let m = if l == 0 { &mut mean_a } else { &mut mean_b };
        for d in 0..dim { m[d] += v[d] as f64; }
    }
    for d in 0..dim { mean_a[d] /= n_a as f64; mean_b[d] /= n_b as f64; }
    let mut cov = vec![vec![0.0f64; dim]; dim];
    for (v, &l) in zc.iter().zip(&ls) {
        let m = if l == 0 { &mean_a } else { &mean_b };
        for i in 0..dim {
            let di = v[i] as f64 - m[i];
            for jx in 0..dim { cov[i][jx] += di * (v[jx] as f64 - m[jx]); }
        }
    }
    for i in 0..dim {
        for jx in 0..dim { cov[i][jx] /= ls.len() as f64; }
        cov[i][i] += 1e-6;
    }
    // Solve cov * w = (mean_b - mean_a) by Gauss-Jordan.
    let mut aug: Vec<Vec<f64>> = (0..dim)
        .map(|i| { let mut r = cov[i].clone(); r.push(mean_b[i] - mean_a[i]); r })
        .collect();
    for col in 0..dim {
        let piv = (col..dim).max_by(|&x, &y| aug[x][col].abs().partial_cmp(&aug[y][col].abs()).unwrap()).unwrap();
        aug.swap(col, piv);
        let p = aug[col][col];
        for jx in col..=dim { aug[col][jx] /= p; }
        for r in 0..dim {
            if r != col {
                let f = aug[r][col];
                for jx in col..=dim { aug[r][jx] -= f * aug[col][jx]; }
            }
        }
    }
    let w: Vec<f64> = (0..dim).map(|i| aug[i][dim]).collect();
    let diff: Vec<f64> = (0..dim).map(|i| mean_b[i] - mean_a[i]).collect();
    let mahal = w.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt();
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let wdir: Vec<f64> = w.iter().map(|x| x / wn).collect();
    eprintln!(
        "    diag: zc rms={rms:.4} worst per-dim sep={worst_sep:.2} mahal={mahal:.2} disc acc={:.3}",
        disc_hits as f64 / ls.len() as f64
    );
    eprintln!("    lda dir: {:?}", wdir.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>());
    (a_d, a_c)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let per_domain: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(500);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0);
    let mut hy = srae_core::model::SraeHyper::desk_default();
    if let Some(v) = std::env::args().nth(9) { hy.k = v.parse().unwrap(); }
    eprintln!("k={} a={} trunk={:?} downs={} decoder={:?}", hy.k, hy.a, hy.trunk, hy.content_downs(), hy.decoder);
    let mut cfg = TrainConfig::desk_default(Variant::TwoDisc);
    cfg.epochs = epochs;
    cfg.seed = seed;
    if let Some(v) = args.get(4) { cfg.lr_recon = v.parse().unwrap(); }
    if let Some(v) = args.get(5) { cfg.alpha1 = v.parse().unwrap(); }
    if let Some(v) = args.get(6) { cfg.lr_disc = v.parse().unwrap(); }
    if let Some(v) = args.get(7) { cfg.disc_steps_per_ae_step = v.parse().unwrap(); }
    if let Some(v) = args.get(8) { cfg.beta_kl = v.parse().unwrap(); }
    eprintln!("lr_recon={} alpha1={} lr_disc={} disc_steps={} beta_kl={}",
        cfg.lr_recon, cfg.alpha1, cfg.lr_disc, cfg.disc_steps_per_ae_step, cfg.beta_kl);
    let mut spec = SynthSpec::desk_default(per_domain, seed);
    spec.image_h = 32; spec.image_w = 32;
    let ds = generate_synthetic(&spec).unwrap();
    let ds2 = ds.clone();
    let t0 = std::time::Instant::now();
    let mut cb = |epoch: usize, ckpt: &srae_core::checkpoint::Checkpoint| {
        let (ad, ac) = probe(&ds2, ckpt);
        println!("epoch {epoch}: t={:.0}s acc_zd={ad:.3} acc_zc={ac:.3}", t0.elapsed().as_secs_f64());
    };
    let (_ckpt, log) = train_with_snapshots(&hy, &cfg, &ds, &NullClock, Some(&mut cb)).unwrap();
    let recs = log.records();
    let spe = recs.len() / epochs;
    let first: f32 = recs[..spe].iter().map(|r| r.entropy_qc).sum::<f32>() / spe as f32;
    let last: f32 = recs[recs.len()-spe..].iter().map(|r| r.entropy_qc).sum::<f32>() / spe as f32;
    println!("l_r first={:.4} final={:.4} ratio={:.3}", recs[0].l_r, recs.last().unwrap().l_r, recs.last().unwrap().l_r / recs[0].l_r);
    println!("entropy first-epoch={first:.4} last-epoch={last:.4}");
    let _ = Tensor::zeros(vec![1]);
}
