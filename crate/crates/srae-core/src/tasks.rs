//! Inference-time tasks on a trained model: mean encodings, domain
//! translation (content from one image, style from another), exhaustive
//! nearest-neighbor search over content codes, a logistic-regression probe
//! for measuring domain information in a code, and CSV export.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{tile_domain, ParamStore, SraeModel};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Mean (epsilon = 0) encoding of one dataset example.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingRecord {
    pub id: usize,
    pub domain: usize,
    /// Flattened a*b*k content code.
    pub z_c: Vec<f32>,
    /// Length-j domain code.
    pub z_d: Vec<f32>,
}

/// Encodes every example with zero noise, preserving dataset order.
pub fn encode_dataset(
    model: &SraeModel,
    params: &ParamStore,
    dataset: &Dataset,
) -> Result<Vec<EncodingRecord>> {
    dataset.validate()?;
    let mut records = Vec::with_capacity(dataset.len());
    for (id, (img, &domain)) in dataset.images.iter().zip(&dataset.labels).enumerate() {
        let lat = model.encode(params, img, None, None)?;
        records.push(EncodingRecord {
            id,
            domain,
            z_c: lat.mu_c.data().to_vec(),
            z_d: lat.mu_d_vec.data().to_vec(),
        });
    }
    Ok(records)
}

/// Reconstructs an image through its mean codes. Identical to
/// `translate(model, params, x, x)` by construction.
pub fn reconstruct(model: &SraeModel, params: &ParamStore, x: &Tensor) -> Result<Tensor> {
    translate(model, params, x, x)
}

/// Decodes the content of `content_src` in the style of `style_src`: both
/// images are mean-encoded, then the decoder runs on `mu_c(content_src)`
/// concatenated with the tiled `mu_d(style_src)`.
pub fn translate(
    model: &SraeModel,
    params: &ParamStore,
    content_src: &Tensor,
    style_src: &Tensor,
) -> Result<Tensor> {
    let content = model.encode(params, content_src, None, None)?;
    let style = model.encode(params, style_src, None, None)?;
    let z_d = tile_domain(&style.mu_d_vec, model.hyper.a, model.hyper.b)?;
    model.decode(params, &content.mu_c, &z_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    /// `1 - cosine similarity`; all-zero vectors are treated as orthogonal
    /// to everything.
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => {
                let mut s = 0.0f64;
                for (&x, &y) in a.iter().zip(b) {
                    let d = x as f64 - y as f64;
                    s += d * d;
                }
                libm::sqrt(s)
            }
            Metric::Cosine => {
                let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
                for (&x, &y) in a.iter().zip(b) {
                    dot += x as f64 * y as f64;
                    na += x as f64 * x as f64;
                    nb += y as f64 * y as f64;
                }
                if na == 0.0 || nb == 0.0 {
                    return 1.0;
                }
                1.0 - dot / (libm::sqrt(na) * libm::sqrt(nb))
            }
        }
    }
}

/// Exhaustive k-nearest-neighbor search of `query` over the content codes in
/// `corpus`. Returns `(corpus index, distance)` sorted by ascending distance,
/// ties broken by the smaller index. Errors if `k` exceeds the corpus size.
pub fn nn_search(
    query: &[f32],
    corpus: &[EncodingRecord],
    k: usize,
    metric: Metric,
) -> Result<Vec<(usize, f64)>> {
    if k > corpus.len() {
        return Err(Error::contract(format!(
            "k={k} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(corpus.len());
    for (i, rec) in corpus.iter().enumerate() {
        if rec.z_c.len() != query.len() {
            return Err(Error::shape(
                "nn_search",
                format!(
                    "code length {} at corpus index {i} does not match query length {}",
                    rec.z_c.len(),
                    query.len()
                ),
            ));
        }
        scored.push((i, metric.distance(query, &rec.z_c)));
    }
    // Stable sort on distance alone keeps the original (ascending) index
    // order among ties.
    scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    scored.truncate(k);
    Ok(scored)
}

/// A multinomial logistic-regression probe trained on frozen codes, used to
/// measure how much domain information a code carries.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    /// Row-major [m, dim] weights over standardized features.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub m: usize,
    pub train_accuracy: f32,
    pub test_accuracy: f32,
}

impl DomainClassifier {
    fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    fn logits(&self, x: &[f32]) -> Vec<f64> {
        let dim = self.dim();
        let mut out = self.bias.clone();
        for c in 0..self.m {
            let row = &self.weights[c * dim..(c + 1) * dim];
            let mut s = 0.0f64;
            for i in 0..dim {
                let z = (x[i] as f64 - self.feature_mean[i]) / self.feature_std[i];
                s += row[i] * z;
            }
            out[c] += s;
        }
        out
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, features: &[Vec<f32>], labels: &[usize]) -> f32 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(x, &l)| self.predict(x) == l)
            .count();
        hits as f32 / features.len().max(1) as f32
    }
}

fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Fits the probe by full-batch gradient descent on a deterministic,
/// domain-stratified 80/20 split. Features are standardized with train-split
/// statistics; the step size is set from the feature scale and training runs
/// until the loss change drops below 1e-6 (at most 500 epochs).
pub fn fit_domain_classifier(
    features: &[Vec<f32>],
    labels: &[usize],
    m: usize,
    seed: u64,
) -> Result<DomainClassifier> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::contract("need matching, non-empty features and labels"));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::contract("all feature vectors must share one non-zero length"));
    }
    if labels.iter().any(|&l| l >= m) {
        return Err(Error::contract("label out of range"));
    }

    // Stratified split: 80% of each domain to train, remainder to test.
    let mut rng = Rng::derive(seed, 0x70726f6265);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for domain in 0..m {
        let mut pool: Vec<usize> =
            (0..labels.len()).filter(|&i| labels[i] == domain).collect();
        if pool.len() < 2 {
            return Err(Error::contract(format!(
                "domain {domain} needs at least 2 examples for a train/test split"
            )));
        }
        // Fisher-Yates shuffle.
        for i in (1..pool.len()).rev() {
            pool.swap(i, rng.below(i + 1));
        }
        let n_train = ((pool.len() * 4) / 5).max(1).min(pool.len() - 1);
        train_idx.extend_from_slice(&pool[..n_train]);
        test_idx.extend_from_slice(&pool[n_train..]);
    }

    // Standardization statistics from the train split only.
    let mut mean = vec![0.0f64; dim];
    for &i in &train_idx {
        for (s, &v) in mean.iter_mut().zip(&features[i]) {
            *s += v as f64;
        }
    }
    for s in &mut mean {
        *s /= train_idx.len() as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &i in &train_idx {
        for ((s, &v), mu) in var.iter_mut().zip(&features[i]).zip(&mean) {
            let d = v as f64 - mu;
            *s += d * d;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| libm::sqrt(v / train_idx.len() as f64).max(1e-6))
        .collect();

    let standardized = |i: usize| -> Vec<f64> {
        features[i]
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((&v, mu), sd)| (v as f64 - mu) / sd)
            .collect()
    };
    let xs_train: Vec<Vec<f64>> = train_idx.iter().map(|&i| standardized(i)).collect();

    // Step size from the softmax-loss curvature bound 0.25 * (1 + mean|x|^2).
    let mean_sq: f64 = xs_train
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / xs_train.len() as f64;
    let lr = 1.0 / (0.25 * (1.0 + mean_sq));

    let n = xs_train.len() as f64;
    let mut weights = vec![0.0f64; m * dim];
    let mut bias = vec![0.0f64; m];
    let mut prev_loss = f64::INFINITY;
    for _ in 0..500 {
        let mut gw = vec![0.0f64; m * dim];
        let mut gb = vec![0.0f64; m];
        let mut loss = 0.0f64;
        for (x, &i) in xs_train.iter().zip(&train_idx) {
            let label = labels[i];
            let mut p: Vec<f64> = (0..m)
                .map(|c| {
                    bias[c]
                        + weights[c * dim..(c + 1) * dim]
                            .iter()
                            .zip(x)
                            .map(|(w, v)| w * v)
                            .sum::<f64>()
                })
                .collect();
            softmax_inplace(&mut p);
            loss -= libm::log(p[label].max(1e-300));
            for c in 0..m {
                let err = p[c] - if c == label { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, v) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                    *g += err * v;
                }
            }
        }
        loss /= n;
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= lr * g / n;
        }
        for (b, g) in bias.iter_mut().zip(&gb) {
            *b -= lr * g / n;
        }
        if (prev_loss - loss).abs() < 1e-6 {
            break;
        }
        prev_loss = loss;
    }

    let mut clf = DomainClassifier {
        weights,
        bias,
        feature_mean: mean,
        feature_std: std,
        m,
        train_accuracy: 0.0,
        test_accuracy: 0.0,
    };
    let gather = |idx: &[usize]| -> (Vec<Vec<f32>>, Vec<usize>) {
        (
            idx.iter().map(|&i| features[i].clone()).collect(),
            idx.iter().map(|&i| labels[i]).collect(),
        )
    };
    let (xs, ys) = gather(&train_idx);
    clf.train_accuracy = clf.accuracy(&xs, &ys);
    let (xs, ys) = gather(&test_idx);
    clf.test_accuracy = clf.accuracy(&xs, &ys);
    Ok(clf)
}

/// Serializes encodings to CSV with the header
/// `id,domain,zc_0..zc_{abk-1},zd_0..zd_{j-1}`.
pub fn export_encodings(records: &[EncodingRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::contract("no encodings to export"));
    }
    let zc_len = records[0].z_c.len();
    let zd_len = records[0].z_d.len();
    let mut out = String::from("id,domain");
    for i in 0..zc_len {
        out.push_str(&format!(",zc_{i}"));
    }
    for i in 0..zd_len {
        out.push_str(&format!(",zd_{i}"));
    }
    out.push('\n');
    for rec in records {
        if rec.z_c.len() != zc_len || rec.z_d.len() != zd_len {
            return Err(Error::contract("inconsistent code lengths across records"));
        }
        out.push_str(&format!("{},{}", rec.id, rec.domain));
        for v in &rec.z_c {
            out.push_str(&format!(",{v}"));
        }
        for v in &rec.z_d {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}
