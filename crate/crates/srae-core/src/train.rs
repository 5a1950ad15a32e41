//! The adversarial training loop: per step, discriminator updates, one
//! reconstruction update, one content-entropy ascent step, and (two-disc
//! variant) one domain cross-entropy descent step, each confined to its own
//! parameter group. Plain SGD throughout.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::data::{sample_batch, Batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{FeatureExtractor, LossReport, SraeLossGraph};
use crate::model::{draw_eps, init_params, ParamGroup, ParamStore, SraeHyper, Variant};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Training hyperparameters. `alpha1` is the content-entropy ascent step,
/// `alpha2` the domain cross-entropy descent step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    /// Step size of the reconstruction update (trunk, both streams, decoder).
    pub lr_recon: f32,
    pub alpha1: f32,
    pub alpha2: f32,
    pub lr_disc: f32,
    pub disc_steps_per_ae_step: usize,
    pub beta_kl: f32,
    pub seed: u64,
    pub extractor_seed: u64,
}

impl TrainConfig {
    pub fn desk_default(variant: Variant) -> Self {
        TrainConfig {
            variant,
            epochs: 30,
            batch_size: 32,
            lr_recon: 1e-2,
            alpha1: 1e-2,
            alpha2: 1e-2,
            lr_disc: 1e-2,
            disc_steps_per_ae_step: 1,
            beta_kl: 0.0,
            seed: 0,
            extractor_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.lr_recon <= 0.0 || self.alpha1 <= 0.0 || self.alpha2 <= 0.0 || self.lr_disc <= 0.0
        {
            return Err(Error::contract("all learning rates must be positive"));
        }
        if self.disc_steps_per_ae_step == 0 {
            return Err(Error::contract("disc_steps_per_ae_step must be at least 1"));
        }
        if self.beta_kl < 0.0 {
            return Err(Error::contract("beta_kl must be non-negative"));
        }
        Ok(())
    }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub l_r: f32,
    pub l_q_c: f32,
    pub l_q_d: Option<f32>,
    pub entropy_qc: f32,
    pub seconds: f64,
}

/// Append-only per-step metrics with monotone step numbers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    records: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: StepRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::contract("metric step numbers must increase"));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l_r,l_q_c,l_q_d,entropy_qc,seconds\n");
        for r in &self.records {
            let l_q_d = r.l_q_d.map(|v| format!("{v}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step, r.l_r, r.l_q_c, l_q_d, r.entropy_qc, r.seconds
            ));
        }
        out
    }
}

/// Wall-clock source for the metrics log; injected so the core stays
/// platform-free and tests stay deterministic.
pub trait Clock {
    fn seconds(&self) -> f64;
}

/// Always reports zero elapsed time.
pub struct NullClock;

impl Clock for NullClock {
    fn seconds(&self) -> f64 {
        0.0
    }
}

fn group_filter(groups: &'static [ParamGroup]) -> impl Fn(&str) -> bool {
    move |name| ParamGroup::of_name(name).is_some_and(|g| groups.contains(&g))
}

/// Batch-mean gradient accumulator (64-bit sums).
#[derive(Default)]
struct GradAccum {
    sums: BTreeMap<String, Vec<f64>>,
    count: usize,
}

impl GradAccum {
    fn add(&mut self, grads: &BTreeMap<String, Tensor>) {
        for (name, g) in grads {
            let slot = self
                .sums
                .entry(name.clone())
                .or_insert_with(|| alloc::vec![0.0; g.numel()]);
            for (s, v) in slot.iter_mut().zip(g.data()) {
                *s += *v as f64;
            }
        }
        self.count += 1;
    }

    /// `param += step * mean_gradient` for every accumulated parameter.
    fn apply(&self, params: &mut ParamStore, step: f64) -> Result<()> {
        let n = self.count.max(1) as f64;
        for (name, g) in &self.sums {
            let tensor = params
                .get_mut(name)
                .ok_or_else(|| Error::contract(format!("unknown parameter `{name}`")))?;
            for (v, s) in tensor.data_mut().iter_mut().zip(g) {
                *v = ((*v as f64) + step * s / n) as f32;
            }
        }
        Ok(())
    }
}

fn term_context(err: Error, term: &str) -> Error {
    match err {
        Error::NonFinite { node } => Error::NonFinite { node: format!("{term} ({node})") },
        other => other,
    }
}

/// Prebuilt training state for one (hyper, config) pair.
pub struct Trainer {
    pub hyper: SraeHyper,
    pub config: TrainConfig,
    pub extractor: FeatureExtractor,
    loss_graph: SraeLossGraph,
}

const RECON_GROUPS: &[ParamGroup] = &[
    ParamGroup::Trunk,
    ParamGroup::Content,
    ParamGroup::Domain,
    ParamGroup::Decoder,
];
const DISC_GROUPS: &[ParamGroup] = &[ParamGroup::DiscContent, ParamGroup::DiscDomain];
const CONTENT_GROUP: &[ParamGroup] = &[ParamGroup::Content];
const DOMAIN_GROUP: &[ParamGroup] = &[ParamGroup::Domain];

impl Trainer {
    pub fn new(hyper: SraeHyper, config: TrainConfig) -> Result<Self> {
        hyper.validate()?;
        config.validate()?;
        let extractor = FeatureExtractor::new(hyper.image_c, config.extractor_seed);
        let loss_graph = SraeLossGraph::build(&hyper, config.variant, &extractor, config.beta_kl)?;
        Ok(Trainer { hyper, config, extractor, loss_graph })
    }

    pub fn loss_graph(&self) -> &SraeLossGraph {
        &self.loss_graph
    }

    fn batch_inputs<'a>(
        &self,
        batch: &'a Batch,
        eps: &'a [(Tensor, Tensor)],
        labels: &'a [Tensor],
        i: usize,
    ) -> crate::graph::Inputs<'a> {
        [
            ("x", &batch.images[i]),
            ("eps_c", &eps[i].0),
            ("eps_d", &eps[i].1),
            ("label", &labels[i]),
        ]
        .into_iter()
        .collect()
    }

    fn one_hots(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        batch
            .labels
            .iter()
            .map(|&l| SraeLossGraph::one_hot(self.hyper.m, l))
            .collect()
    }

    /// One discriminator update over the batch. Returns the pre-update
    /// batch means of (l_q_c, l_q_d).
    pub fn disc_update(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        eps: &[(Tensor, Tensor)],
    ) -> Result<(f32, Option<f32>)> {
        let lg = &self.loss_graph;
        let labels = self.one_hots(batch)?;
        let mut accum = GradAccum::default();
        let mut l_qc_sum = 0.0f64;
        let mut l_qd_sum = 0.0f64;
        let watch: Vec<_> = core::iter::once(lg.l_qc).chain(lg.l_qd).collect();
        for i in 0..batch.images.len() {
            let inputs = self.batch_inputs(batch, eps, &labels, i);
            let (_, watched, grads) = lg
                .graph
                .backprop(&inputs, params, lg.l_q, &group_filter(DISC_GROUPS), &watch)
                .map_err(|e| term_context(e, "discriminator loss L_q"))?;
            l_qc_sum += watched[0] as f64;
            if watched.len() > 1 {
                l_qd_sum += watched[1] as f64;
            }
            accum.add(&grads);
        }
        accum.apply(params, -(self.config.lr_disc as f64))?;
        let n = batch.images.len() as f64;
        let l_qd = lg.l_qd.map(|_| (l_qd_sum / n) as f32);
        Ok(((l_qc_sum / n) as f32, l_qd))
    }

    /// One reconstruction update (minimizes `l_r + beta_kl * kl` over all
    /// encoder groups and the decoder). Returns batch means of (l_r, kl).
    pub fn recon_update(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        eps: &[(Tensor, Tensor)],
    ) -> Result<(f32, f32)> {
        let lg = &self.loss_graph;
        let labels = self.one_hots(batch)?;
        let mut accum = GradAccum::default();
        let mut l_r_sum = 0.0f64;
        let mut kl_sum = 0.0f64;
        for i in 0..batch.images.len() {
            let inputs = self.batch_inputs(batch, eps, &labels, i);
            let (_, watched, grads) = lg
                .graph
                .backprop(
                    &inputs,
                    params,
                    lg.recon_objective,
                    &group_filter(RECON_GROUPS),
                    &[lg.l_r, lg.kl],
                )
                .map_err(|e| term_context(e, "reconstruction loss L_r"))?;
            l_r_sum += watched[0] as f64;
            kl_sum += watched[1] as f64;
            accum.add(&grads);
        }
        accum.apply(params, -(self.config.lr_recon as f64))?;
        let n = batch.images.len() as f64;
        Ok(((l_r_sum / n) as f32, (kl_sum / n) as f32))
    }

    /// One gradient-ascent step on the entropy of the content
    /// discriminator's output, confined to the content stream. Returns the
    /// pre-update batch-mean entropy.
    pub fn entropy_update(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        eps: &[(Tensor, Tensor)],
    ) -> Result<f32> {
        let lg = &self.loss_graph;
        let labels = self.one_hots(batch)?;
        let mut accum = GradAccum::default();
        let mut sum = 0.0f64;
        for i in 0..batch.images.len() {
            let inputs = self.batch_inputs(batch, eps, &labels, i);
            let (h, _, grads) = lg
                .graph
                .backprop(&inputs, params, lg.entropy_c, &group_filter(CONTENT_GROUP), &[])
                .map_err(|e| term_context(e, "content entropy L_c"))?;
            sum += h as f64;
            accum.add(&grads);
        }
        // Ascent: the content stream maximizes entropy.
        accum.apply(params, self.config.alpha1 as f64)?;
        Ok((sum / batch.images.len() as f64) as f32)
    }

    /// One descent step on the domain discriminator's cross-entropy,
    /// confined to the domain stream (two-discriminator variant only).
    pub fn domain_update(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        eps: &[(Tensor, Tensor)],
    ) -> Result<f32> {
        let lg = &self.loss_graph;
        let l_qd = lg
            .l_qd
            .ok_or_else(|| Error::contract("domain update requires the two-disc variant"))?;
        let labels = self.one_hots(batch)?;
        let mut accum = GradAccum::default();
        let mut sum = 0.0f64;
        for i in 0..batch.images.len() {
            let inputs = self.batch_inputs(batch, eps, &labels, i);
            let (v, _, grads) = lg
                .graph
                .backprop(&inputs, params, l_qd, &group_filter(DOMAIN_GROUP), &[])
                .map_err(|e| term_context(e, "domain stream loss L_q^d"))?;
            sum += v as f64;
            accum.add(&grads);
        }
        accum.apply(params, -(self.config.alpha2 as f64))?;
        Ok((sum / batch.images.len() as f64) as f32)
    }

    /// Draws the per-example noises a training step would use.
    pub fn draw_step_eps(&self, batch: &Batch, rng: &mut Rng) -> Vec<(Tensor, Tensor)> {
        (0..batch.images.len()).map(|_| draw_eps(&self.hyper, rng)).collect()
    }

    /// Applies one full training step with explicit noises.
    pub fn train_step_with_eps(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        eps: &[(Tensor, Tensor)],
    ) -> Result<LossReport> {
        let mut l_q_c = 0.0;
        let mut l_q_d = None;
        for _ in 0..self.config.disc_steps_per_ae_step {
            let (c, d) = self.disc_update(params, batch, eps)?;
            l_q_c = c;
            l_q_d = d;
        }
        let (l_r, kl) = self.recon_update(params, batch, eps)?;
        let l_c_entropy = self.entropy_update(params, batch, eps)?;
        if self.config.variant == Variant::TwoDisc {
            let d = self.domain_update(params, batch, eps)?;
            l_q_d = Some(d);
        }
        Ok(LossReport { l_r, l_q_c, l_q_d, l_c_entropy, kl: Some(kl) })
    }

    /// Applies one full training step, drawing noises from `rng`.
    pub fn train_step(
        &self,
        params: &mut ParamStore,
        batch: &Batch,
        rng: &mut Rng,
    ) -> Result<LossReport> {
        let eps = self.draw_step_eps(batch, rng);
        self.train_step_with_eps(params, batch, &eps)
    }
}

/// Runs the full training loop. Deterministic for a fixed config; the clock
/// only feeds the metrics log.
pub fn train(
    hyper: &SraeHyper,
    config: &TrainConfig,
    dataset: &Dataset,
    clock: &dyn Clock,
) -> Result<(Checkpoint, MetricsLog)> {
    train_with_snapshots(hyper, config, dataset, clock, None)
}

/// [`train`] with an optional per-epoch callback (for periodic snapshots).
pub fn train_with_snapshots(
    hyper: &SraeHyper,
    config: &TrainConfig,
    dataset: &Dataset,
    clock: &dyn Clock,
    mut on_epoch: Option<&mut dyn FnMut(usize, &Checkpoint)>,
) -> Result<(Checkpoint, MetricsLog)> {
    dataset.validate()?;
    if dataset.m != hyper.m {
        return Err(Error::contract(format!(
            "dataset has {} domains, model expects {}",
            dataset.m, hyper.m
        )));
    }
    for img in &dataset.images {
        if img.shape() != [hyper.image_h, hyper.image_w, hyper.image_c] {
            return Err(Error::shape(
                "train",
                format!("dataset image shape {:?} does not match the model", img.shape()),
            ));
        }
    }
    let mut trainer = Trainer::new(hyper.clone(), config.clone())?;
    let steps_per_epoch = dataset.len() / config.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::contract(format!(
            "dataset of {} examples cannot fill a batch of {}",
            dataset.len(),
            config.batch_size
        )));
    }

    let mut params = init_params(hyper, config.variant, config.seed)?;
    let mut batch_rng = Rng::derive(config.seed, 1);
    let mut eps_rng = Rng::derive(config.seed, 2);
    let mut log = MetricsLog::new();
    let start = clock.seconds();
    let mut step: u64 = 0;
    let total_steps = (config.epochs * steps_per_epoch) as f32;
    for epoch in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            // The reconstruction step decays linearly to 10% of its initial
            // value over the run. Late in training the encoder then drifts
            // slowly under the reconstruction objective while the adversarial
            // steps keep their full strength, which lets the entropy pressure
            // squeeze out residual domain leakage instead of chasing a moving
            // target.
            let frac = step as f32 / total_steps;
            trainer.config.lr_recon = config.lr_recon * (1.0 - 0.9 * frac);
            let batch = sample_batch(dataset, config.batch_size, &mut batch_rng)?;
            let report = trainer.train_step(&mut params, &batch, &mut eps_rng)?;
            step += 1;
            log.push(StepRecord {
                step,
                l_r: report.l_r,
                l_q_c: report.l_q_c,
                l_q_d: report.l_q_d,
                entropy_qc: report.l_c_entropy,
                seconds: clock.seconds() - start,
            })?;
        }
        if let Some(cb) = on_epoch.as_deref_mut() {
            let snapshot =
                Checkpoint::new(hyper.clone(), config.variant, params.clone(), step);
            cb(epoch, &snapshot);
        }
    }
    Ok((Checkpoint::new(hyper.clone(), config.variant, params, step), log))
}
