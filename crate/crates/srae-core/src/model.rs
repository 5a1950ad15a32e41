//! The SRAE networks: shared encoder trunk, content and domain streams with
//! reparameterized sampling, decoder over concatenated codes, and the latent
//! discriminators (one per variant).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, Inputs, NodeId, OpGraph, ParamSource};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Leaky-ReLU slope used throughout the networks.
pub const LEAKY_SLOPE: f32 = 0.2;

/// Which discriminator configuration is in play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// A single discriminator on the content code.
    OneDisc,
    /// Discriminators on both the content and the domain code.
    TwoDisc,
}

impl Variant {
    pub fn code(self) -> u32 {
        match self {
            Variant::OneDisc => 1,
            Variant::TwoDisc => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Variant::OneDisc),
            2 => Ok(Variant::TwoDisc),
            other => Err(Error::Checkpoint(format!("corrupt checkpoint: unknown variant {other}"))),
        }
    }
}

/// Model hyperparameters. `a x b x k` is the content-code shape, `j` the
/// domain-code width, `m` the number of domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SraeHyper {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub a: usize,
    pub b: usize,
    pub k: usize,
    pub j: usize,
    pub m: usize,
    /// Output widths of the stride-2 trunk convolutions; the trunk length
    /// fixes the downsampling factor (2 per layer).
    pub trunk: Vec<usize>,
    /// Width of the content stream's hidden convolution.
    pub stream_c: usize,
    /// Width of the domain stream's hidden convolution.
    pub stream_d: usize,
    /// Decoder conv widths: one at latent resolution plus one per upsample
    /// stage (so `trunk.len() + 1` entries).
    pub decoder: Vec<usize>,
    /// Hidden width of the discriminator MLPs.
    pub disc_hidden: usize,
}

impl SraeHyper {
    /// Desk-scale defaults: 32x32 grayscale, 2x2x2 content code, 4-channel
    /// domain code, two domains. Trains in minutes on one CPU core. The
    /// content code is deliberately small and the content stream deliberately
    /// deep: both are what lets the adversarial game actually strip domain
    /// information out of the content code at this scale.
    pub fn desk_default() -> Self {
        SraeHyper {
            image_h: 32,
            image_w: 32,
            image_c: 1,
            a: 2,
            b: 2,
            k: 2,
            j: 4,
            m: 2,
            trunk: vec![16],
            stream_c: 32,
            stream_d: 16,
            decoder: vec![32, 32, 32, 16, 8],
            disc_hidden: 32,
        }
    }

    /// A tiny configuration for gradient checks (8x8 input).
    pub fn tiny() -> Self {
        SraeHyper {
            image_h: 8,
            image_w: 8,
            image_c: 1,
            a: 2,
            b: 2,
            k: 3,
            j: 2,
            m: 2,
            trunk: vec![4],
            stream_c: 6,
            stream_d: 5,
            decoder: vec![6, 5, 4],
            disc_hidden: 6,
        }
    }

    /// Number of stride-2 convolutions inside the content stream: the shared
    /// trunk halves the image `trunk.len()` times, the content stream goes
    /// the rest of the way down to the `a x b` latent grid. Keeping most of
    /// the downsampling inside the content stream matters because the
    /// adversarial entropy update only reaches content-stream parameters; a
    /// deep content stream lets that update shape the features themselves
    /// rather than a thin readout of domain-rich trunk features.
    pub fn content_downs(&self) -> usize {
        let post = self.image_h >> self.trunk.len();
        ((post / self.a).max(1)).trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::contract(format!("need at least 2 domains, got {}", self.m)));
        }
        if self.a * self.b * self.k == 0 || self.j == 0 || self.image_c == 0 {
            return Err(Error::contract("latent and image dimensions must be positive"));
        }
        let factor = 1usize << self.trunk.len();
        let post_h = self.image_h / factor;
        let post_w = self.image_w / factor;
        if self.image_h != post_h * factor
            || self.image_w != post_w * factor
            || post_h < self.a
            || post_w < self.b
            || post_h % self.a != 0
            || post_w % self.b != 0
            || !(post_h / self.a).is_power_of_two()
            || post_h / self.a != post_w / self.b
        {
            return Err(Error::contract(format!(
                "trunk of {} stride-2 layers maps {}x{} to {}x{}; the content \
                 stream must halve that a whole number of times to reach the \
                 {}x{} latent grid",
                self.trunk.len(), self.image_h, self.image_w, post_h, post_w, self.a, self.b
            )));
        }
        let stages = self.trunk.len() + self.content_downs();
        if self.decoder.len() != stages + 1 {
            return Err(Error::contract(format!(
                "decoder needs {} conv widths (one per upsample stage plus one), got {}",
                stages + 1,
                self.decoder.len()
            )));
        }
        if self.trunk.iter().chain(&self.decoder).any(|&w| w == 0)
            || self.stream_c == 0
            || self.stream_d == 0
            || self.disc_hidden == 0
        {
            return Err(Error::contract("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Parameter groups with per-group update isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Shared encoder trunk.
    Trunk,
    /// Content stream.
    Content,
    /// Domain stream.
    Domain,
    /// Decoder.
    Decoder,
    /// Discriminator on the content code.
    DiscContent,
    /// Discriminator on the domain code (two-discriminator variant only).
    DiscDomain,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Trunk,
        ParamGroup::Content,
        ParamGroup::Domain,
        ParamGroup::Decoder,
        ParamGroup::DiscContent,
        ParamGroup::DiscDomain,
    ];

    /// Prefix used in parameter names ("theta_c/conv0/w", ...).
    pub fn prefix(self) -> &'static str {
        match self {
            ParamGroup::Trunk => "theta_phi",
            ParamGroup::Content => "theta_c",
            ParamGroup::Domain => "theta_d",
            ParamGroup::Decoder => "theta_g",
            ParamGroup::DiscContent => "theta_q",
            ParamGroup::DiscDomain => "theta_qd",
        }
    }

    pub fn of_name(name: &str) -> Option<ParamGroup> {
        let prefix = name.split('/').next()?;
        ParamGroup::ALL.iter().copied().find(|g| g.prefix() == prefix)
    }
}

/// Named, grouped model parameters. Group membership is disjoint (encoded in
/// the name prefix) and total.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    groups: BTreeMap<&'static str, BTreeMap<String, Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        let group = ParamGroup::of_name(&name)
            .ok_or_else(|| Error::contract(format!("parameter `{name}` has no group prefix")))?;
        self.groups.entry(group.prefix()).or_default().insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let group = ParamGroup::of_name(name)?;
        self.groups.get(group.prefix())?.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let group = ParamGroup::of_name(name)?;
        self.groups.get_mut(group.prefix())?.get_mut(name)
    }

    pub fn group(&self, group: ParamGroup) -> Option<&BTreeMap<String, Tensor>> {
        self.groups.get(group.prefix())
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        self.groups.contains_key(group.prefix())
    }

    /// All parameters in fixed group order, then name order within a group.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        ParamGroup::ALL
            .iter()
            .filter_map(|g| self.groups.get(g.prefix()))
            .flat_map(|m| m.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ParamSource for ParamStore {
    fn get_param(&self, name: &str) -> Option<&Tensor> {
        self.get(name)
    }
}

/// Content and domain codes for one image, with their posterior parameters.
/// `z_d` is a spatial tiling of the 1x1xj sample `z_d_vec`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub mu_c: Tensor,
    pub logvar_c: Tensor,
    pub mu_d_vec: Tensor,
    pub logvar_d_vec: Tensor,
    pub z_c: Tensor,
    pub z_d: Tensor,
}

/// Broadcasts a 1x1xj vector over an a x b spatial grid.
pub fn tile_domain(z_vec: &Tensor, a: usize, b: usize) -> Result<Tensor> {
    let j = z_vec.numel();
    let mut data = Vec::with_capacity(a * b * j);
    for _ in 0..a * b {
        data.extend_from_slice(z_vec.data());
    }
    Tensor::from_vec(vec![a, b, j], data)
}

// ---------------------------------------------------------------------------
// Parameter specs and initialization

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    /// Fan-in for weight scaling; 0 marks a zero-initialized bias.
    fan_in: usize,
}

fn conv_spec(specs: &mut Vec<ParamSpec>, name: &str, kh: usize, kw: usize, ci: usize, co: usize) {
    specs.push(ParamSpec {
        name: format!("{name}/w"),
        shape: vec![kh, kw, ci, co],
        fan_in: kh * kw * ci,
    });
    specs.push(ParamSpec { name: format!("{name}/b"), shape: vec![co], fan_in: 0 });
}

fn dense_spec(specs: &mut Vec<ParamSpec>, name: &str, din: usize, dout: usize) {
    specs.push(ParamSpec { name: format!("{name}/w"), shape: vec![din, dout], fan_in: din });
    specs.push(ParamSpec { name: format!("{name}/b"), shape: vec![dout], fan_in: 0 });
}

fn param_specs(hy: &SraeHyper, variant: Variant) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let mut prev = hy.image_c;
    for (i, &w) in hy.trunk.iter().enumerate() {
        conv_spec(&mut specs, &format!("theta_phi/conv{i}"), 3, 3, prev, w);
        prev = w;
    }
    let trunk_out = prev;

    let mut prev = trunk_out;
    for i in 0..hy.content_downs() {
        conv_spec(&mut specs, &format!("theta_c/down{i}"), 3, 3, prev, hy.stream_c);
        prev = hy.stream_c;
    }
    conv_spec(&mut specs, "theta_c/conv0", 3, 3, prev, hy.stream_c);
    conv_spec(&mut specs, "theta_c/mu", 3, 3, hy.stream_c, hy.k);
    conv_spec(&mut specs, "theta_c/logvar", 3, 3, hy.stream_c, hy.k);

    conv_spec(&mut specs, "theta_d/conv0", 3, 3, trunk_out, hy.stream_d);
    dense_spec(&mut specs, "theta_d/mu", hy.stream_d, hy.j);
    dense_spec(&mut specs, "theta_d/logvar", hy.stream_d, hy.j);

    let mut prev = hy.k + hy.j;
    for (i, &w) in hy.decoder.iter().enumerate() {
        conv_spec(&mut specs, &format!("theta_g/conv{i}"), 3, 3, prev, w);
        prev = w;
    }
    conv_spec(&mut specs, "theta_g/out", 3, 3, prev, hy.image_c);

    dense_spec(&mut specs, "theta_q/fc0", hy.a * hy.b * hy.k, hy.disc_hidden);
    dense_spec(&mut specs, "theta_q/fc1", hy.disc_hidden, hy.m);
    if variant == Variant::TwoDisc {
        dense_spec(&mut specs, "theta_qd/fc0", hy.a * hy.b * hy.j, hy.disc_hidden);
        dense_spec(&mut specs, "theta_qd/fc1", hy.disc_hidden, hy.m);
    }
    specs
}

/// Initial bias of the posterior log-variance heads. Starting the noise
/// scale at exp(-4/2) ~ 0.14 instead of 1 keeps the sampled codes close to
/// their means early in training, so the reconstruction and the latent
/// discriminators see signal instead of unit noise.
const LOGVAR_BIAS_INIT: f32 = -4.0;

/// Deterministic initialization: weights from a fan-in-scaled uniform
/// distribution, biases zero except the log-variance heads.
pub fn init_params(hy: &SraeHyper, variant: Variant, seed: u64) -> Result<ParamStore> {
    hy.validate()?;
    let mut rng = Rng::derive(seed, 0x696e6974);
    let mut store = ParamStore::new();
    for spec in param_specs(hy, variant) {
        let numel: usize = spec.shape.iter().product();
        let tensor = if spec.fan_in == 0 {
            if spec.name.contains("/logvar/") {
                Tensor::from_vec(spec.shape, vec![LOGVAR_BIAS_INIT; numel])?
            } else {
                Tensor::zeros(spec.shape)
            }
        } else {
            let bound = libm::sqrtf(3.0 / spec.fan_in as f32);
            let data: Vec<f32> = (0..numel).map(|_| rng.uniform(-bound, bound)).collect();
            Tensor::from_vec(spec.shape, data)?
        };
        store.insert(spec.name, tensor)?;
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// Graph construction

/// Node ids of the encoder's outputs inside a larger graph.
#[derive(Debug, Clone, Copy)]
pub struct EncoderNodes {
    pub mu_c: NodeId,
    pub logvar_c: NodeId,
    pub mu_d_vec: NodeId,
    pub logvar_d_vec: NodeId,
    pub z_c: NodeId,
    pub z_d_vec: NodeId,
    pub z_d: NodeId,
}

/// Appends the encoder to `gb`. `x` is the image, `eps_c` / `eps_d` the
/// reparameterization noises (shapes a x b x k and 1 x 1 x j).
/// Per-channel spatial centering and scaling to unit variance over the
/// `a x b` grid. `floor` is added to the variance before the rescale; it
/// bounds the amplification when a channel is nearly constant across space.
fn instance_norm(gb: &mut GraphBuilder, t: NodeId, hy: &SraeHyper, floor: f32) -> NodeId {
    let chan_mean = gb.global_avg_pool(t);
    let chan_mean = gb.reshape(chan_mean, vec![1, 1, hy.k]);
    let tiled_mean = gb.tile_spatial(chan_mean, hy.a, hy.b);
    let centered = gb.sub(t, tiled_mean);
    let sq = gb.mul(centered, centered);
    let var = gb.global_avg_pool(sq);
    let var = gb.add_scalar(var, 1e-4);
    let log_var = gb.log(var);
    let half_neg = gb.scale(log_var, -0.5);
    let inv_std = gb.exp(half_neg);
    let inv_std = gb.reshape(inv_std, vec![1, 1, hy.k]);
    let inv_std = gb.tile_spatial(inv_std, hy.a, hy.b);
    gb.mul(centered, inv_std)
}

pub fn build_encoder(
    gb: &mut GraphBuilder,
    hy: &SraeHyper,
    x: NodeId,
    eps_c: NodeId,
    eps_d: NodeId,
) -> EncoderNodes {
    let mut h = x;
    for i in 0..hy.trunk.len() {
        let w = gb.param(&format!("theta_phi/conv{i}/w"));
        let b = gb.param(&format!("theta_phi/conv{i}/b"));
        let c = gb.conv2d(h, w, b, 2, 1);
        h = gb.leaky_relu(c, LEAKY_SLOPE);
    }

    // Content stream: its own stride-2 convolutions down to the latent
    // resolution, then the convolutional heads.
    let mut hc = h;
    for i in 0..hy.content_downs() {
        let w = gb.param(&format!("theta_c/down{i}/w"));
        let b = gb.param(&format!("theta_c/down{i}/b"));
        let c = gb.conv2d(hc, w, b, 2, 1);
        hc = gb.leaky_relu(c, LEAKY_SLOPE);
    }
    let w = gb.param("theta_c/conv0/w");
    let b = gb.param("theta_c/conv0/b");
    let hc = gb.conv2d(hc, w, b, 1, 1);
    // Squaring instead of a leaky rectifier: the content features respond to
    // the energy of the conv0 filters, not their sign, so a filter whose
    // response flips sign between domain polarities yields an identical
    // content feature for both.
    let hc = gb.mul(hc, hc);
    let w = gb.param("theta_c/mu/w");
    let b = gb.param("theta_c/mu/b");
    let mu_raw = gb.conv2d(hc, w, b, 1, 1);
    // Instance-normalize the content mean: center and scale each channel
    // across the spatial grid. Global intensity then has no direction to
    // live in (it must flow through the domain code), magnitudes are bounded
    // so the adversarial game cannot blow the code up, and the latent
    // discriminator always sees unit-scale inputs.
    //
    // The normalize -> square -> normalize chain additionally cancels
    // global polarity: a bright shape on a dark background and its inverse
    // produce spatially complementary activation maps, which centering turns
    // into (approximately) negated patterns and squaring then identifies.
    let normed = instance_norm(gb, mu_raw, hy);
    let sq = gb.mul(normed, normed);
    let mu_c = instance_norm(gb, sq, hy);
    let w = gb.param("theta_c/logvar/w");
    let b = gb.param("theta_c/logvar/b");
    let logvar_c = gb.conv2d(hc, w, b, 1, 1);

    // z = mu + eps * exp(logvar / 2)
    let half = gb.scale(logvar_c, 0.5);
    let sigma_c = gb.exp(half);
    let noise = gb.mul(eps_c, sigma_c);
    let z_c = gb.add(mu_c, noise);

    // Domain stream: one stride-2 conv on the trunk features, pool to 1x1,
    // dense heads, then spatial tiling.
    let w = gb.param("theta_d/conv0/w");
    let b = gb.param("theta_d/conv0/b");
    let hd = gb.conv2d(h, w, b, 2, 1);
    let hd = gb.leaky_relu(hd, LEAKY_SLOPE);
    let pooled = gb.global_avg_pool(hd);
    let w = gb.param("theta_d/mu/w");
    let b = gb.param("theta_d/mu/b");
    let mu = gb.dense(pooled, w, b);
    let mu_d_vec = gb.reshape(mu, vec![1, 1, hy.j]);
    let w = gb.param("theta_d/logvar/w");
    let b = gb.param("theta_d/logvar/b");
    let lv = gb.dense(pooled, w, b);
    let logvar_d_vec = gb.reshape(lv, vec![1, 1, hy.j]);

    let half = gb.scale(logvar_d_vec, 0.5);
    let sigma_d = gb.exp(half);
    let noise = gb.mul(eps_d, sigma_d);
    let z_d_vec = gb.add(mu_d_vec, noise);
    let z_d = gb.tile_spatial(z_d_vec, hy.a, hy.b);

    EncoderNodes { mu_c, logvar_c, mu_d_vec, logvar_d_vec, z_c, z_d_vec, z_d }
}

/// Appends the decoder: concatenated codes through upsample+conv stages to a
/// sigmoid image.
pub fn build_decoder(gb: &mut GraphBuilder, hy: &SraeHyper, z_c: NodeId, z_d: NodeId) -> NodeId {
    let z = gb.concat_channels(z_c, z_d);
    let w = gb.param("theta_g/conv0/w");
    let b = gb.param("theta_g/conv0/b");
    let mut d = gb.conv2d(z, w, b, 1, 1);
    d = gb.leaky_relu(d, LEAKY_SLOPE);
    for i in 1..hy.decoder.len() {
        let up = gb.upsample2(d);
        let w = gb.param(&format!("theta_g/conv{i}/w"));
        let b = gb.param(&format!("theta_g/conv{i}/b"));
        d = gb.conv2d(up, w, b, 1, 1);
        d = gb.leaky_relu(d, LEAKY_SLOPE);
    }
    let w = gb.param("theta_g/out/w");
    let b = gb.param("theta_g/out/b");
    let out = gb.conv2d(d, w, b, 1, 1);
    gb.sigmoid(out)
}

/// Appends a latent discriminator: flatten, two dense layers, softmax over
/// the `m` domains. `prefix` selects the parameter group and with it the
/// code the discriminator reads: "theta_q" sees the full a x b x k content
/// code, "theta_qd" the a x b x j tiled domain code.
pub fn build_discriminator(
    gb: &mut GraphBuilder,
    hy: &SraeHyper,
    prefix: &str,
    z: NodeId,
) -> NodeId {
    let channels = if prefix == "theta_qd" { hy.j } else { hy.k };
    let flat = gb.reshape(z, vec![hy.a * hy.b * channels]);
    let w = gb.param(&format!("{prefix}/fc0/w"));
    let b = gb.param(&format!("{prefix}/fc0/b"));
    let h = gb.dense(flat, w, b);
    let h = gb.leaky_relu(h, LEAKY_SLOPE);
    let w = gb.param(&format!("{prefix}/fc1/w"));
    let b = gb.param(&format!("{prefix}/fc1/b"));
    let logits = gb.dense(h, w, b);
    gb.softmax(logits)
}

// ---------------------------------------------------------------------------
// Inference wrapper

/// Prebuilt inference graphs for one hyperparameter set.
#[derive(Debug, Clone)]
pub struct SraeModel {
    pub hyper: SraeHyper,
    pub variant: Variant,
    encoder: OpGraph,
    decoder: OpGraph,
    disc_c: OpGraph,
    disc_d: Option<OpGraph>,
}

impl SraeModel {
    pub fn new(hyper: SraeHyper, variant: Variant) -> Result<Self> {
        hyper.validate()?;

        let mut gb = GraphBuilder::new();
        let x = gb.input("x");
        let eps_c = gb.input("eps_c");
        let eps_d = gb.input("eps_d");
        let enc = build_encoder(&mut gb, &hyper, x, eps_c, eps_d);
        gb.output("mu_c", enc.mu_c);
        gb.output("logvar_c", enc.logvar_c);
        gb.output("mu_d_vec", enc.mu_d_vec);
        gb.output("logvar_d_vec", enc.logvar_d_vec);
        gb.output("z_c", enc.z_c);
        gb.output("z_d", enc.z_d);
        let encoder = gb.build();

        let mut gb = GraphBuilder::new();
        let z_c = gb.input("z_c");
        let z_d = gb.input("z_d");
        let x_hat = build_decoder(&mut gb, &hyper, z_c, z_d);
        gb.output("x_hat", x_hat);
        let decoder = gb.build();

        let mut gb = GraphBuilder::new();
        let z = gb.input("z");
        let p = build_discriminator(&mut gb, &hyper, "theta_q", z);
        gb.output("p", p);
        let disc_c = gb.build();

        let disc_d = match variant {
            Variant::OneDisc => None,
            Variant::TwoDisc => {
                let mut gb = GraphBuilder::new();
                let z = gb.input("z");
                let p = build_discriminator(&mut gb, &hyper, "theta_qd", z);
                gb.output("p", p);
                Some(gb.build())
            }
        };

        Ok(SraeModel { hyper, variant, encoder, decoder, disc_c, disc_d })
    }

    fn check_image(&self, x: &Tensor) -> Result<()> {
        let hy = &self.hyper;
        if x.shape() != [hy.image_h, hy.image_w, hy.image_c] {
            return Err(Error::shape(
                "encode",
                format!(
                    "image shape {:?} does not match configured {}x{}x{}",
                    x.shape(),
                    hy.image_h,
                    hy.image_w,
                    hy.image_c
                ),
            ));
        }
        Ok(())
    }

    /// Encodes an image. `None` noise means the mean encoding (epsilon = 0),
    /// used for all inference-time tasks.
    pub fn encode(
        &self,
        params: &ParamStore,
        x: &Tensor,
        eps_c: Option<&Tensor>,
        eps_d: Option<&Tensor>,
    ) -> Result<LatentPair> {
        self.check_image(x)?;
        let hy = &self.hyper;
        let zero_c = Tensor::zeros(vec![hy.a, hy.b, hy.k]);
        let zero_d = Tensor::zeros(vec![1, 1, hy.j]);
        let eps_c = eps_c.unwrap_or(&zero_c);
        let eps_d = eps_d.unwrap_or(&zero_d);
        if eps_c.shape() != [hy.a, hy.b, hy.k] {
            return Err(Error::shape("encode", format!("eps_c shape {:?}", eps_c.shape())));
        }
        if eps_d.numel() != hy.j {
            return Err(Error::shape("encode", format!("eps_d shape {:?}", eps_d.shape())));
        }
        let inputs: Inputs = [("x", x), ("eps_c", eps_c), ("eps_d", eps_d)]
            .into_iter()
            .collect();
        let mut out = self.encoder.evaluate(&inputs, params)?;
        let take = |out: &mut BTreeMap<String, Tensor>, name: &str| out.remove(name).unwrap();
        Ok(LatentPair {
            mu_c: take(&mut out, "mu_c"),
            logvar_c: take(&mut out, "logvar_c"),
            mu_d_vec: take(&mut out, "mu_d_vec"),
            logvar_d_vec: take(&mut out, "logvar_d_vec"),
            z_c: take(&mut out, "z_c"),
            z_d: take(&mut out, "z_d"),
        })
    }

    /// Decodes a content/domain code pair into an image in [0, 1].
    pub fn decode(&self, params: &ParamStore, z_c: &Tensor, z_d: &Tensor) -> Result<Tensor> {
        let hy = &self.hyper;
        if z_c.shape() != [hy.a, hy.b, hy.k] {
            return Err(Error::shape("decode", format!("z_c shape {:?}", z_c.shape())));
        }
        if z_d.shape() != [hy.a, hy.b, hy.j] {
            return Err(Error::shape("decode", format!("z_d shape {:?}", z_d.shape())));
        }
        let inputs: Inputs = [("z_c", z_c), ("z_d", z_d)].into_iter().collect();
        let mut out = self.decoder.evaluate(&inputs, params)?;
        Ok(out.remove("x_hat").unwrap())
    }

    /// Domain probabilities from the content-code discriminator.
    pub fn discriminate_content(&self, params: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let hy = &self.hyper;
        if z.shape() != [hy.a, hy.b, hy.k] {
            return Err(Error::shape("discriminate", format!("z shape {:?}", z.shape())));
        }
        let inputs: Inputs = [("z", z)].into_iter().collect();
        Ok(self.disc_c.evaluate(&inputs, params)?.remove("p").unwrap())
    }

    /// Domain probabilities from the domain-code discriminator
    /// (two-discriminator variant only).
    pub fn discriminate_domain(&self, params: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let hy = &self.hyper;
        let graph = self.disc_d.as_ref().ok_or_else(|| {
            Error::contract("domain discriminator requires the two-discriminator variant")
        })?;
        if z.shape() != [hy.a, hy.b, hy.j] {
            return Err(Error::shape("discriminate", format!("z shape {:?}", z.shape())));
        }
        let inputs: Inputs = [("z", z)].into_iter().collect();
        Ok(graph.evaluate(&inputs, params)?.remove("p").unwrap())
    }

    pub fn encoder_graph(&self) -> &OpGraph {
        &self.encoder
    }
}

/// Fresh standard-normal noise tensors for one example.
pub fn draw_eps(hy: &SraeHyper, rng: &mut Rng) -> (Tensor, Tensor) {
    let mut ec = Tensor::zeros(vec![hy.a, hy.b, hy.k]);
    rng.fill_normal(ec.data_mut());
    let mut ed = Tensor::zeros(vec![1, 1, hy.j]);
    rng.fill_normal(ed.data_mut());
    (ec, ed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_variant_aware() {
        let hy = SraeHyper::tiny();
        let p1 = init_params(&hy, Variant::TwoDisc, 0).unwrap();
        let p2 = init_params(&hy, Variant::TwoDisc, 0).unwrap();
        assert_eq!(p1, p2);
        let p3 = init_params(&hy, Variant::TwoDisc, 1).unwrap();
        assert_ne!(p1, p3);

        assert!(p1.has_group(ParamGroup::DiscDomain));
        let one = init_params(&hy, Variant::OneDisc, 0).unwrap();
        assert!(!one.has_group(ParamGroup::DiscDomain));
    }

    #[test]
    fn zero_eps_collapses_to_mean() {
        let hy = SraeHyper::tiny();
        let params = init_params(&hy, Variant::TwoDisc, 3).unwrap();
        let model = SraeModel::new(hy.clone(), Variant::TwoDisc).unwrap();
        let mut rng = Rng::new(9);
        let mut x = Tensor::zeros(vec![hy.image_h, hy.image_w, hy.image_c]);
        for v in x.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let lat = model.encode(&params, &x, None, None).unwrap();
        assert_eq!(lat.z_c, lat.mu_c);
        let tiled = tile_domain(&lat.mu_d_vec, hy.a, hy.b).unwrap();
        assert_eq!(lat.z_d, tiled);
    }

    #[test]
    fn z_d_is_spatially_constant() {
        let hy = SraeHyper::tiny();
        let params = init_params(&hy, Variant::TwoDisc, 4).unwrap();
        let model = SraeModel::new(hy.clone(), Variant::TwoDisc).unwrap();
        let mut rng = Rng::new(10);
        let mut x = Tensor::zeros(vec![hy.image_h, hy.image_w, hy.image_c]);
        for v in x.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let (ec, ed) = draw_eps(&hy, &mut rng);
        let lat = model.encode(&params, &x, Some(&ec), Some(&ed)).unwrap();
        let first: Vec<f32> = (0..hy.j).map(|c| lat.z_d.data()[c]).collect();
        for p in 0..hy.a * hy.b {
            for c in 0..hy.j {
                assert_eq!(lat.z_d.data()[p * hy.j + c], first[c]);
            }
        }
    }

    #[test]
    fn tile_domain_examples() {
        let v = Tensor::from_vec(vec![1, 1, 2], vec![0.5, -1.0]).unwrap();
        let t = tile_domain(&v, 2, 2).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        for p in 0..4 {
            assert_eq!(t.data()[p * 2], 0.5);
            assert_eq!(t.data()[p * 2 + 1], -1.0);
        }
        let id = tile_domain(&v, 1, 1).unwrap();
        assert_eq!(id.data(), v.data());
    }

    #[test]
    fn round_trip_shape_and_range() {
        let hy = SraeHyper::tiny();
        let params = init_params(&hy, Variant::OneDisc, 5).unwrap();
        let model = SraeModel::new(hy.clone(), Variant::OneDisc).unwrap();
        let x = Tensor::zeros(vec![hy.image_h, hy.image_w, hy.image_c]);
        let lat = model.encode(&params, &x, None, None).unwrap();
        let xh = model.decode(&params, &lat.z_c, &lat.z_d).unwrap();
        assert_eq!(xh.shape(), x.shape());
        assert!(xh.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Determinism: identical codes give bitwise-identical images.
        let xh2 = model.decode(&params, &lat.z_c, &lat.z_d).unwrap();
        assert_eq!(xh, xh2);
    }

    #[test]
    fn stream_parameter_partition() {
        // Walk the encoder graph: the content head depends only on
        // theta_c and theta_phi, the domain head only on theta_d and theta_phi.
        let hy = SraeHyper::tiny();
        let model = SraeModel::new(hy, Variant::TwoDisc).unwrap();
        let graph = model.encoder_graph();
        let mu_c = graph.output_id("mu_c").unwrap();
        for name in graph.param_ancestors(mu_c) {
            let g = ParamGroup::of_name(name).unwrap();
            assert!(
                g == ParamGroup::Content || g == ParamGroup::Trunk,
                "unexpected {name} feeding mu_c"
            );
        }
        let mu_d = graph.output_id("mu_d_vec").unwrap();
        for name in graph.param_ancestors(mu_d) {
            let g = ParamGroup::of_name(name).unwrap();
            assert!(
                g == ParamGroup::Domain || g == ParamGroup::Trunk,
                "unexpected {name} feeding mu_d"
            );
        }
    }

    #[test]
    fn sampled_variance_matches_logvar() {
        // Monte-Carlo oracle: with eps ~ N(0,1), Var(z) = exp(logvar).
        let hy = SraeHyper::tiny();
        let params = init_params(&hy, Variant::OneDisc, 6).unwrap();
        let model = SraeModel::new(hy.clone(), Variant::OneDisc).unwrap();
        let mut rng = Rng::new(11);
        let mut x = Tensor::zeros(vec![hy.image_h, hy.image_w, hy.image_c]);
        for v in x.data_mut() {
            *v = rng.uniform(0.0, 1.0);
        }
        let mean = model.encode(&params, &x, None, None).unwrap();
        let n = 10_000;
        let dim = hy.a * hy.b * hy.k;
        let mut sum = vec![0.0f64; dim];
        let mut sumsq = vec![0.0f64; dim];
        for _ in 0..n {
            let (ec, ed) = draw_eps(&hy, &mut rng);
            let lat = model.encode(&params, &x, Some(&ec), Some(&ed)).unwrap();
            for (i, v) in lat.z_c.data().iter().enumerate() {
                sum[i] += *v as f64;
                sumsq[i] += (*v as f64) * (*v as f64);
            }
        }
        for i in 0..dim {
            let mean_i = sum[i] / n as f64;
            let var = sumsq[i] / n as f64 - mean_i * mean_i;
            let expected = libm::exp(mean.logvar_c.data()[i] as f64);
            assert!(
                (var - expected).abs() / expected < 0.05,
                "dim {i}: sampled var {var} vs exp(logvar) {expected}"
            );
        }
    }
}
