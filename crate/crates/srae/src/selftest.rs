//! `srae selftest`: a condensed run of the gradient and invariant suites,
//! printing one line per check.

use anyhow::{bail, Result};
use srae_core::checkpoint::Checkpoint;
use srae_core::graph::{finite_diff_check, GraphBuilder, Inputs, NodeId};
use srae_core::losses::{FeatureExtractor, SraeLossGraph};
use srae_core::model::{init_params, SraeHyper, SraeModel, Variant};
use srae_core::rng::Rng;
use srae_core::tasks::{reconstruct, translate};
use srae_core::Tensor;
use std::collections::BTreeMap;

const H: f64 = 1e-3;
const TOL: f64 = 5e-3;

fn rand_tensor(shape: &[usize], rng: &mut Rng, lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn check(name: &str, ok: bool, failures: &mut usize) {
    println!("{} {name}", if ok { "ok  " } else { "FAIL" });
    if !ok {
        *failures += 1;
    }
}

fn fd_op(
    name: &str,
    failures: &mut usize,
    build: impl Fn(&mut GraphBuilder, &mut Rng) -> (NodeId, BTreeMap<String, Tensor>),
) {
    let mut rng = Rng::new(0x5e1f);
    let mut gb = GraphBuilder::new();
    let (out, params) = build(&mut gb, &mut rng);
    let loss = gb.sum_all(out);
    let graph = gb.build();
    let inputs: Inputs = BTreeMap::new();
    let ok = finite_diff_check(&graph, &inputs, &params, loss, H, TOL)
        .map(|r| r.passed())
        .unwrap_or(false);
    check(&format!("gradient: {name}"), ok, failures);
}

pub fn run() -> Result<()> {
    let mut failures = 0usize;

    fd_op("conv2d", &mut failures, |gb, rng| {
        let mut p = BTreeMap::new();
        p.insert("x".into(), rand_tensor(&[5, 5, 2], rng, -1.0, 1.0));
        p.insert("k".into(), rand_tensor(&[3, 3, 2, 3], rng, -0.7, 0.7));
        p.insert("b".into(), rand_tensor(&[3], rng, -0.5, 0.5));
        let (x, k, b) = (gb.param("x"), gb.param("k"), gb.param("b"));
        let c = gb.conv2d(x, k, b, 2, 1);
        let w = gb.constant(rand_tensor(&[3, 3, 3], rng, -1.0, 1.0));
        (gb.mul(c, w), p)
    });
    fd_op("dense", &mut failures, |gb, rng| {
        let mut p = BTreeMap::new();
        p.insert("x".into(), rand_tensor(&[5], rng, -1.0, 1.0));
        p.insert("w".into(), rand_tensor(&[5, 3], rng, -0.7, 0.7));
        p.insert("b".into(), rand_tensor(&[3], rng, -0.5, 0.5));
        let (x, w, b) = (gb.param("x"), gb.param("w"), gb.param("b"));
        let d = gb.dense(x, w, b);
        let c = gb.constant(rand_tensor(&[3], rng, -1.0, 1.0));
        (gb.mul(d, c), p)
    });
    fd_op("activations and pointwise ops", &mut failures, |gb, rng| {
        let mut p = BTreeMap::new();
        p.insert("x".into(), rand_tensor(&[8], rng, 0.3, 1.5));
        let x = gb.param("x");
        let a = gb.sigmoid(x);
        let b = gb.tanh(a);
        let c = gb.exp(b);
        let d = gb.log(c);
        let e = gb.leaky_relu(d, 0.2);
        let f = gb.softmax(e);
        let g = gb.scale(f, 2.0);
        let h = gb.add_scalar(g, -0.1);
        let w = gb.constant(rand_tensor(&[8], rng, -1.0, 1.0));
        (gb.mul(h, w), p)
    });
    fd_op("spatial ops", &mut failures, |gb, rng| {
        let mut p = BTreeMap::new();
        p.insert("x".into(), rand_tensor(&[3, 3, 2], rng, -1.0, 1.0));
        p.insert("v".into(), rand_tensor(&[1, 1, 2], rng, -1.0, 1.0));
        let x = gb.param("x");
        let v = gb.param("v");
        let up = gb.upsample2(x);
        let tiled = gb.tile_spatial(v, 6, 6);
        let cat = gb.concat_channels(up, tiled);
        let pooled = gb.global_avg_pool(cat);
        let w = gb.constant(rand_tensor(&[1, 1, 4], rng, -1.0, 1.0));
        (gb.mul(pooled, w), p)
    });

    // Full loss graphs, both variants.
    let hy = SraeHyper::tiny();
    let extractor = FeatureExtractor::new(hy.image_c, 0);
    for variant in [Variant::OneDisc, Variant::TwoDisc] {
        let lg = SraeLossGraph::build(&hy, variant, &extractor, 0.1)?;
        let params = init_params(&hy, variant, 0)?;
        let mut rng = Rng::new(0xf00d);
        let x = rand_tensor(&[hy.image_h, hy.image_w, hy.image_c], &mut rng, 0.0, 1.0);
        let eps_c = rand_tensor(&[hy.a, hy.b, hy.k], &mut rng, -1.0, 1.0);
        let eps_d = rand_tensor(&[1, 1, hy.j], &mut rng, -1.0, 1.0);
        let label = SraeLossGraph::one_hot(hy.m, 0)?;
        let inputs: Inputs = [
            ("x", &x),
            ("eps_c", &eps_c),
            ("eps_d", &eps_d),
            ("label", &label),
        ]
        .into_iter()
        .collect();
        let mut ok = true;
        for node in [Some(lg.recon_objective), Some(lg.l_q), Some(lg.entropy_c), lg.l_qd] {
            let Some(node) = node else { continue };
            ok &= finite_diff_check(&lg.graph, &inputs, &params, node, H, TOL)?.passed();
        }
        check(&format!("gradient: full loss graph ({variant:?})"), ok, &mut failures);
    }

    // Invariants.
    let params = init_params(&hy, Variant::TwoDisc, 1)?;
    let model = SraeModel::new(hy.clone(), Variant::TwoDisc)?;
    let mut rng = Rng::new(2);
    let x = rand_tensor(&[hy.image_h, hy.image_w, hy.image_c], &mut rng, 0.0, 1.0);

    let recon = reconstruct(&model, &params, &x)?;
    let swapped = translate(&model, &params, &x, &x)?;
    check(
        "invariant: identity swap equals reconstruction",
        recon.data() == swapped.data(),
        &mut failures,
    );

    let lat = model.encode(&params, &x, None, None)?;
    let zd_ok = (0..hy.j).all(|ch| {
        let first = lat.z_d.data()[ch];
        (0..hy.a * hy.b).all(|i| lat.z_d.data()[i * hy.j + ch] == first)
    });
    check("invariant: domain code is spatially constant", zd_ok, &mut failures);

    let probs = model.discriminate_content(&params, &lat.z_c)?;
    let sum: f32 = probs.data().iter().sum();
    check(
        "invariant: discriminator output is a distribution",
        (sum - 1.0).abs() < 1e-5 && probs.data().iter().all(|&p| p >= 0.0),
        &mut failures,
    );

    let ckpt = Checkpoint::new(hy.clone(), Variant::TwoDisc, params, 7);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes)?;
    check(
        "invariant: checkpoint round-trip is bitwise",
        back == ckpt && back.to_bytes() == bytes,
        &mut failures,
    );

    if failures > 0 {
        bail!("{failures} selftest check(s) failed");
    }
    Ok(())
}
