//! Synthetic two-domain shape dataset and balanced batch sampling.
//!
//! The synthetic domains share one content distribution (a single circle,
//! square, or triangle at a random position and size) and differ only in
//! style, so ground-truth disentanglement is known by construction: shape
//! identity belongs in the content code, style in the domain code.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

/// Ground-truth content parameters of a synthetic image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentDesc {
    pub kind: ShapeKind,
    pub cx: f32,
    pub cy: f32,
    pub size: f32,
}

/// Rendering style of one domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainStyle {
    pub background: f32,
    pub foreground: f32,
    /// Filled shapes when true, 1.5 px outlines when false.
    pub filled: bool,
}

/// Specification for a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub styles: Vec<DomainStyle>,
    pub counts: Vec<usize>,
    pub image_h: usize,
    pub image_w: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// Two 32x32 domains: filled bright shapes on a dark background vs.
    /// outlined dark shapes on a bright background.
    pub fn desk_default(per_domain: usize, seed: u64) -> Self {
        SynthSpec {
            styles: vec![
                DomainStyle { background: 0.10, foreground: 0.90, filled: true },
                DomainStyle { background: 0.92, foreground: 0.08, filled: false },
            ],
            counts: vec![per_domain, per_domain],
            image_h: 32,
            image_w: 32,
            seed,
        }
    }
}

/// Labeled image collection over `m` domains.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub m: usize,
    /// Present for synthetic data only.
    pub descriptors: Option<Vec<ContentDesc>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::contract("images and labels differ in length"));
        }
        let mut per_domain = vec![0usize; self.m];
        for &l in &self.labels {
            if l >= self.m {
                return Err(Error::contract(format!("label {l} out of range for m={}", self.m)));
            }
            per_domain[l] += 1;
        }
        if per_domain.iter().any(|&c| c == 0) {
            return Err(Error::contract("every domain needs at least one example"));
        }
        Ok(())
    }

    /// Indices of every example with the given label.
    pub fn domain_indices(&self, domain: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == domain)
            .map(|(i, _)| i)
            .collect()
    }

    /// Mean pixel intensity over all images of a domain.
    pub fn domain_mean_intensity(&self, domain: usize) -> f32 {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (img, &l) in self.images.iter().zip(&self.labels) {
            if l != domain {
                continue;
            }
            sum += img.data().iter().map(|&v| v as f64).sum::<f64>();
            count += img.numel();
        }
        (sum / count.max(1) as f64) as f32
    }
}

const OUTLINE_THICKNESS: f32 = 1.5;

fn inside(kind: ShapeKind, dx: f32, dy: f32, r: f32) -> bool {
    if r <= 0.0 {
        return false;
    }
    match kind {
        ShapeKind::Circle => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        ShapeKind::Triangle => {
            // Upward triangle: apex (0, -r), base corners (+-r, +r).
            if dy < -r || dy > r {
                return false;
            }
            // Half-width grows linearly from apex to base.
            let t = (dy + r) / (2.0 * r);
            dx.abs() <= t * r
        }
    }
}

fn render(
    h: usize,
    w: usize,
    style: &DomainStyle,
    desc: &ContentDesc,
) -> Tensor {
    let mut data = vec![style.background; h * w];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f32 + 0.5 - desc.cx;
            let dy = y as f32 + 0.5 - desc.cy;
            let hit = if style.filled {
                inside(desc.kind, dx, dy, desc.size)
            } else {
                inside(desc.kind, dx, dy, desc.size)
                    && !inside(desc.kind, dx, dy, desc.size - OUTLINE_THICKNESS)
            };
            if hit {
                data[y * w + x] = style.foreground;
            }
        }
    }
    Tensor::raw(vec![h, w, 1], data)
}

/// Deterministically generates a synthetic dataset from its spec.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    if spec.styles.len() != spec.counts.len() || spec.styles.len() < 2 {
        return Err(Error::contract("need one style per domain and at least two domains"));
    }
    if spec.counts.iter().any(|&c| c == 0) {
        return Err(Error::contract("per-domain counts must be positive"));
    }
    let (h, w) = (spec.image_h, spec.image_w);
    let max_size = (h.min(w) as f32) / 2.0 - 3.0;
    let min_size = 4.0;
    if max_size < min_size {
        return Err(Error::contract(format!(
            "image {h}x{w} too small for the largest shape (need at least 14x14)"
        )));
    }

    let mut rng = Rng::derive(spec.seed, 0x73796e7468);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut descriptors = Vec::new();
    for (domain, (&count, style)) in spec.counts.iter().zip(&spec.styles).enumerate() {
        for _ in 0..count {
            let kind = match rng.below(3) {
                0 => ShapeKind::Circle,
                1 => ShapeKind::Square,
                _ => ShapeKind::Triangle,
            };
            let size = rng.uniform(min_size, max_size);
            let cx = rng.uniform(size + 1.0, w as f32 - size - 1.0);
            let cy = rng.uniform(size + 1.0, h as f32 - size - 1.0);
            let desc = ContentDesc { kind, cx, cy, size };
            images.push(render(h, w, style, &desc));
            labels.push(domain);
            descriptors.push(desc);
        }
    }
    Ok(Dataset { images, labels, m: spec.styles.len(), descriptors: Some(descriptors) })
}

/// A balanced mini-batch; `indices` point back into the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Draws `batch_size / m` examples per domain, uniformly without replacement
/// within the call. Deterministic given the RNG state.
pub fn sample_batch(dataset: &Dataset, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
    if batch_size == 0 || batch_size % dataset.m != 0 {
        return Err(Error::contract(format!(
            "batch size {batch_size} must be a positive multiple of m={}",
            dataset.m
        )));
    }
    let per_domain = batch_size / dataset.m;
    let mut images = Vec::with_capacity(batch_size);
    let mut labels = Vec::with_capacity(batch_size);
    let mut indices = Vec::with_capacity(batch_size);
    for domain in 0..dataset.m {
        let pool = dataset.domain_indices(domain);
        if pool.len() < per_domain {
            return Err(Error::contract(format!(
                "domain {domain} has {} examples, batch needs {per_domain}",
                pool.len()
            )));
        }
        for pick in rng.sample_without_replacement(pool.len(), per_domain) {
            let idx = pool[pick];
            images.push(dataset.images[idx].clone());
            labels.push(domain);
            indices.push(idx);
        }
    }
    Ok(Batch { images, labels, indices })
}
