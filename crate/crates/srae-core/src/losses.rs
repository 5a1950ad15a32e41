//! Training objectives: perceptual reconstruction loss, discriminator
//! cross-entropies, the content-entropy adversarial objective, and the
//! optional KL regularizer.
//!
//! Sign conventions: discriminators minimize cross-entropy; the content
//! stream maximizes the entropy of the content discriminator's output.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Inputs, NodeId, OpGraph};
use crate::model::{
    build_decoder, build_discriminator, build_encoder, SraeHyper, ParamStore, Variant,
    LEAKY_SLOPE,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Probabilities are clamped to at least this before any logarithm.
pub const PROB_FLOOR: f32 = 1e-7;

/// A fixed (never trained) multi-scale conv stack whose activations define
/// the perceptual distance. Tap 0 is the raw image, so a pixel term is
/// always present.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    layers: Vec<(Tensor, Tensor)>,
    pub seed: u64,
}

impl FeatureExtractor {
    pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 16];

    /// Seeded stride-2 conv stack with leaky-ReLU, one tap per layer.
    pub fn new(image_c: usize, seed: u64) -> Self {
        Self::with_widths(image_c, seed, &Self::DEFAULT_WIDTHS)
    }

    pub fn with_widths(image_c: usize, seed: u64, widths: &[usize]) -> Self {
        let mut rng = Rng::derive(seed, 0x70657263);
        let mut layers = Vec::new();
        let mut prev = image_c;
        for &w in widths {
            let fan_in = 3 * 3 * prev;
            let bound = libm::sqrtf(3.0 / fan_in as f32);
            let data: Vec<f32> = (0..3 * 3 * prev * w).map(|_| rng.uniform(-bound, bound)).collect();
            let kernel = Tensor::from_vec(vec![3, 3, prev, w], data).unwrap();
            layers.push((kernel, Tensor::zeros(vec![w])));
            prev = w;
        }
        FeatureExtractor { layers, seed }
    }

    /// Number of conv taps (excluding the raw-pixel tap).
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// The frozen weights, for the frozen-extractor invariant checks.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|(k, b)| [k, b])
    }

    /// Appends the extractor to a graph as constants; returns all tap nodes
    /// (raw image first).
    pub fn add_taps(&self, gb: &mut GraphBuilder, x: NodeId) -> Vec<NodeId> {
        let mut taps = vec![x];
        let mut h = x;
        for (kernel, bias) in &self.layers {
            let k = gb.constant(kernel.clone());
            let b = gb.constant(bias.clone());
            let c = gb.conv2d(h, k, b, 2, 1);
            h = gb.leaky_relu(c, LEAKY_SLOPE);
            taps.push(h);
        }
        taps
    }

    /// Element counts of each tap for an `h x w x c` input.
    pub fn tap_numels(&self, h: usize, w: usize, c: usize) -> Vec<usize> {
        let mut numels = vec![h * w * c];
        let (mut h, mut w) = (h, w);
        for (kernel, _) in &self.layers {
            h = (h + 2 - 3) / 2 + 1;
            w = (w + 2 - 3) / 2 + 1;
            numels.push(h * w * kernel.shape()[3]);
        }
        numels
    }

    /// Feature maps of an image, raw tap first.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut gb = GraphBuilder::new();
        let input = gb.input("x");
        let taps = self.add_taps(&mut gb, input);
        let graph = gb.build();
        let inputs: Inputs = [("x", x)].into_iter().collect();
        graph.eval::<f32>(&inputs, &crate::graph::NoParams, &taps)
    }
}

/// Appends the perceptual loss between two images to a graph: the sum over
/// taps of the mean-square feature difference.
pub fn build_perceptual_loss(
    gb: &mut GraphBuilder,
    extractor: &FeatureExtractor,
    x: NodeId,
    x_hat: NodeId,
    h: usize,
    w: usize,
    c: usize,
) -> NodeId {
    let taps_x = extractor.add_taps(gb, x);
    let taps_h = extractor.add_taps(gb, x_hat);
    let numels = extractor.tap_numels(h, w, c);
    let mut total = None;
    for ((tx, th), numel) in taps_x.into_iter().zip(taps_h).zip(numels) {
        let diff = gb.sub(tx, th);
        let sq = gb.squared_l2(diff);
        let term = gb.scale(sq, 1.0 / numel as f32);
        total = Some(match total {
            None => term,
            Some(t) => gb.add(t, term),
        });
    }
    total.unwrap()
}

/// Sum of per-tap mean-square feature distances between two images.
/// Symmetric in its arguments and zero iff the images are identical.
pub fn perceptual_loss(p: &FeatureExtractor, x: &Tensor, x_hat: &Tensor) -> Result<f32> {
    if x.shape() != x_hat.shape() {
        return Err(Error::shape(
            "perceptual_loss",
            format!("image shapes differ: {:?} vs {:?}", x.shape(), x_hat.shape()),
        ));
    }
    if x.shape().len() != 3 {
        return Err(Error::shape("perceptual_loss", "expected [h, w, c] images"));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut gb = GraphBuilder::new();
    let xn = gb.input("x");
    let hn = gb.input("x_hat");
    let loss = build_perceptual_loss(&mut gb, p, xn, hn, h, w, c);
    let graph = gb.build();
    let inputs: Inputs = [("x", x), ("x_hat", x_hat)].into_iter().collect();
    let out = graph.eval::<f32>(&inputs, &crate::graph::NoParams, &[loss])?;
    out[0].item()
}

fn check_distribution(q: &[f32]) -> Result<()> {
    let sum: f64 = q.iter().map(|&v| v as f64).sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(Error::contract(format!("probabilities sum to {sum}, expected 1")));
    }
    Ok(())
}

/// `-log q[label]` with the probability clamped to at least `PROB_FLOOR`.
pub fn cross_entropy(q: &[f32], label: usize) -> Result<f32> {
    check_distribution(q)?;
    if label >= q.len() {
        return Err(Error::contract(format!(
            "label {label} out of range for {} classes",
            q.len()
        )));
    }
    let p = (q[label] as f64).max(PROB_FLOOR as f64);
    Ok((-libm::log(p)) as f32)
}

/// Shannon entropy `-sum q log q`, in [0, ln m].
pub fn entropy(q: &[f32]) -> Result<f32> {
    check_distribution(q)?;
    let mut h = 0.0f64;
    for &v in q {
        let p = v as f64;
        h -= p * libm::log(p.max(PROB_FLOOR as f64));
    }
    Ok(h as f32)
}

/// All loss terms on one batch, as batch means.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub l_r: f32,
    pub l_q_c: f32,
    /// Absent in the one-discriminator variant.
    pub l_q_d: Option<f32>,
    /// Entropy of the content discriminator's output, in [0, ln m].
    pub l_c_entropy: f32,
    pub kl: Option<f32>,
}

/// The full per-example SRAE loss graph: encoder, decoder, discriminators,
/// and every objective as a named scalar node.
///
/// Inputs: `x` (image), `eps_c`, `eps_d` (noises), `label` (one-hot, length m).
#[derive(Debug, Clone)]
pub struct SraeLossGraph {
    pub graph: OpGraph,
    pub variant: Variant,
    pub beta_kl: f32,
    /// Perceptual reconstruction loss.
    pub l_r: NodeId,
    /// Content-discriminator cross-entropy.
    pub l_qc: NodeId,
    /// Domain-discriminator cross-entropy (two-discriminator variant).
    pub l_qd: Option<NodeId>,
    /// Combined discriminator loss (equals `l_qc` in the one-disc variant).
    pub l_q: NodeId,
    /// Entropy of the content discriminator's output.
    pub entropy_c: NodeId,
    /// KL divergence of both posteriors to the standard normal.
    pub kl: NodeId,
    /// Reconstruction objective: `l_r + beta_kl * kl`.
    pub recon_objective: NodeId,
}

fn neg_sum_p_log_q(gb: &mut GraphBuilder, p: NodeId, q: NodeId) -> NodeId {
    let clamped = gb.clamp_min(q, PROB_FLOOR);
    let logq = gb.log(clamped);
    let prod = gb.mul(p, logq);
    let s = gb.sum_all(prod);
    gb.scale(s, -1.0)
}

fn kl_to_standard_normal(gb: &mut GraphBuilder, mu: NodeId, logvar: NodeId) -> NodeId {
    // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)
    let musq = gb.mul(mu, mu);
    let var = gb.exp(logvar);
    let t = gb.add(musq, var);
    let t = gb.add_scalar(t, -1.0);
    let t = gb.sub(t, logvar);
    let s = gb.sum_all(t);
    gb.scale(s, 0.5)
}

impl SraeLossGraph {
    pub fn build(
        hy: &SraeHyper,
        variant: Variant,
        extractor: &FeatureExtractor,
        beta_kl: f32,
    ) -> Result<Self> {
        hy.validate()?;
        let mut gb = GraphBuilder::new();
        let x = gb.input("x");
        let eps_c = gb.input("eps_c");
        let eps_d = gb.input("eps_d");
        let label = gb.input("label");

        let enc = build_encoder(&mut gb, hy, x, eps_c, eps_d);
        let x_hat = build_decoder(&mut gb, hy, enc.z_c, enc.z_d);
        let l_r = build_perceptual_loss(
            &mut gb,
            extractor,
            x,
            x_hat,
            hy.image_h,
            hy.image_w,
            hy.image_c,
        );

        // The discriminators read the posterior means. Feeding them the
        // sampled codes opens a degenerate optimum: the content stream can
        // maximize entropy by inflating its log-variance until the
        // discriminator sees pure noise while the means still carry the
        // domain — which is exactly what the code is supposed to lose.
        let p_c = build_discriminator(&mut gb, hy, "theta_q", enc.mu_c);
        let l_qc = neg_sum_p_log_q(&mut gb, label, p_c);
        let entropy_c = neg_sum_p_log_q(&mut gb, p_c, p_c);

        let (l_qd, l_q) = match variant {
            Variant::OneDisc => (None, l_qc),
            Variant::TwoDisc => {
                let mu_d_tiled = gb.tile_spatial(enc.mu_d_vec, hy.a, hy.b);
                let p_d = build_discriminator(&mut gb, hy, "theta_qd", mu_d_tiled);
                let l_qd = neg_sum_p_log_q(&mut gb, label, p_d);
                (Some(l_qd), gb.add(l_qc, l_qd))
            }
        };

        let kl_c = kl_to_standard_normal(&mut gb, enc.mu_c, enc.logvar_c);
        let kl_d = kl_to_standard_normal(&mut gb, enc.mu_d_vec, enc.logvar_d_vec);
        let kl = gb.add(kl_c, kl_d);
        let recon_objective = if beta_kl > 0.0 {
            let weighted = gb.scale(kl, beta_kl);
            gb.add(l_r, weighted)
        } else {
            l_r
        };

        gb.output("x_hat", x_hat);
        gb.output("z_c", enc.z_c);
        gb.output("z_d", enc.z_d);
        gb.output("p_c", p_c);
        gb.output("l_r", l_r);

        Ok(SraeLossGraph {
            graph: gb.build(),
            variant,
            beta_kl,
            l_r,
            l_qc,
            l_qd,
            l_q,
            entropy_c,
            kl,
            recon_objective,
        })
    }

    /// One-hot label tensor of length m.
    pub fn one_hot(m: usize, label: usize) -> Result<Tensor> {
        if label >= m {
            return Err(Error::contract(format!("label {label} out of range for m={m}")));
        }
        let mut data = vec![0.0f32; m];
        data[label] = 1.0;
        Tensor::from_vec(vec![m], data)
    }
}

/// Computes all loss terms on a batch (batch means of per-example terms).
/// `eps` supplies one noise pair per example; `None` means zero noise.
pub fn srae_losses(
    params: &ParamStore,
    hy: &SraeHyper,
    extractor: &FeatureExtractor,
    batch: &Batch,
    eps: Option<&[(Tensor, Tensor)]>,
    variant: Variant,
) -> Result<LossReport> {
    let lg = SraeLossGraph::build(hy, variant, extractor, 0.0)?;
    let n = batch.images.len();
    if n == 0 {
        return Err(Error::contract("empty batch"));
    }
    if let Some(eps) = eps {
        if eps.len() != n {
            return Err(Error::contract("one eps pair per example required"));
        }
    }
    let zero_c = Tensor::zeros(vec![hy.a, hy.b, hy.k]);
    let zero_d = Tensor::zeros(vec![1, 1, hy.j]);

    let mut targets = vec![lg.l_r, lg.l_qc, lg.entropy_c, lg.kl];
    if let Some(l_qd) = lg.l_qd {
        targets.push(l_qd);
    }

    let mut sums = vec![0.0f64; targets.len()];
    for i in 0..n {
        let label = SraeLossGraph::one_hot(hy.m, batch.labels[i])?;
        let (eps_c, eps_d) = match eps {
            Some(e) => (&e[i].0, &e[i].1),
            None => (&zero_c, &zero_d),
        };
        let inputs: Inputs = [
            ("x", &batch.images[i]),
            ("eps_c", eps_c),
            ("eps_d", eps_d),
            ("label", &label),
        ]
        .into_iter()
        .collect();
        let vals = lg.graph.eval::<f32>(&inputs, params, &targets)?;
        for (s, v) in sums.iter_mut().zip(&vals) {
            *s += v.item()? as f64;
        }
    }
    let mean = |i: usize| (sums[i] / n as f64) as f32;
    Ok(LossReport {
        l_r: mean(0),
        l_q_c: mean(1),
        l_c_entropy: mean(2),
        kl: Some(mean(3)),
        l_q_d: lg.l_qd.map(|_| mean(4)),
    })
}
