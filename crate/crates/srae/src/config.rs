//! JSON run configuration. Unknown keys are rejected; all wrapped-type
//! invariants are checked at parse time.

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use srae_core::data::{generate_synthetic, Dataset, SynthSpec};
use srae_core::model::{SraeHyper, Variant};
use srae_core::train::TrainConfig;
use std::path::Path;

use crate::dataio;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "defaults::variant")]
    pub variant: VariantName,
    #[serde(default)]
    pub image: ImageSize,
    #[serde(default)]
    pub latent: LatentSize,
    #[serde(default = "defaults::domains")]
    pub domains: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr_recon: f32,
    #[serde(default = "defaults::lr")]
    pub alpha1: f32,
    #[serde(default = "defaults::lr")]
    pub alpha2: f32,
    #[serde(default = "defaults::lr")]
    pub lr_disc: f32,
    #[serde(default = "defaults::disc_steps")]
    pub disc_steps: usize,
    #[serde(default)]
    pub beta_kl: f32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSource,
}

#[derive(Debug, Clone, Copy, Deserialize)]
pub enum VariantName {
    #[serde(rename = "one-disc")]
    OneDisc,
    #[serde(rename = "two-disc")]
    TwoDisc,
}

impl From<VariantName> for Variant {
    fn from(v: VariantName) -> Variant {
        match v {
            VariantName::OneDisc => Variant::OneDisc,
            VariantName::TwoDisc => Variant::TwoDisc,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Default for ImageSize {
    fn default() -> Self {
        ImageSize { h: 32, w: 32, c: 1 }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSize {
    pub a: usize,
    pub b: usize,
    pub j: usize,
    pub k: usize,
}

impl Default for LatentSize {
    fn default() -> Self {
        LatentSize { a: 2, b: 2, j: 4, k: 2 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    #[serde(rename = "synthetic")]
    Synthetic {
        #[serde(default = "defaults::per_domain")]
        per_domain: usize,
    },
    #[serde(rename = "directory")]
    Directory { path: String },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { per_domain: defaults::per_domain() }
    }
}

mod defaults {
    use super::VariantName;

    pub fn variant() -> VariantName {
        VariantName::TwoDisc
    }
    pub fn domains() -> usize {
        2
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn lr() -> f32 {
        1e-2
    }
    pub fn disc_steps() -> usize {
        1
    }
    pub fn per_domain() -> usize {
        2000
    }
}

impl Config {
    pub fn from_json(json: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(json).context("invalid configuration")?;
        cfg.hyper()?; // validates image/latent consistency
        cfg.train_config().validate().map_err(|e| anyhow!("{e}"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Model sizes. Layer widths follow the default architecture, with the
    /// trunk depth derived from the image-to-latent downscale factor.
    pub fn hyper(&self) -> Result<SraeHyper> {
        let (img, lat) = (self.image, self.latent);
        if lat.a == 0 || img.h % lat.a != 0 || !(img.h / lat.a).is_power_of_two() {
            bail!("image.h ({}) must be latent.a ({}) times a power of two", img.h, lat.a);
        }
        let n_down = (img.h / lat.a).trailing_zeros() as usize;
        // One stride-2 conv in the shared trunk; the content stream carries
        // the remaining downsampling so the adversarial update reaches it.
        let trunk = vec![16];
        let mut decoder = vec![32usize; n_down.saturating_sub(1)];
        decoder.push(16);
        decoder.push(8);
        let hy = SraeHyper {
            image_h: img.h,
            image_w: img.w,
            image_c: img.c,
            a: lat.a,
            b: lat.b,
            j: lat.j,
            k: lat.k,
            m: self.domains,
            trunk,
            stream_c: 32,
            stream_d: 16,
            decoder,
            disc_hidden: 32,
        };
        hy.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(hy)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            variant: self.variant.into(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_recon: self.lr_recon,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            lr_disc: self.lr_disc,
            disc_steps_per_ae_step: self.disc_steps,
            beta_kl: self.beta_kl,
            seed: self.seed,
            extractor_seed: self.seed,
        }
    }

    /// Materializes the configured data source. `override_dir` (the CLI's
    /// `--data` flag) takes precedence over the config's `data` section.
    pub fn load_dataset(&self, override_dir: Option<&Path>) -> Result<Dataset> {
        let img = self.image;
        if let Some(dir) = override_dir {
            return dataio::load_directory(dir, img.h, img.w, img.c);
        }
        match &self.data {
            DataSource::Synthetic { per_domain } => {
                if self.domains != 2 {
                    bail!("the synthetic generator produces exactly 2 domains");
                }
                if img.c != 1 {
                    bail!("the synthetic generator produces grayscale images (image.c = 1)");
                }
                let mut spec = SynthSpec::desk_default(*per_domain, self.seed);
                spec.image_h = img.h;
                spec.image_w = img.w;
                generate_synthetic(&spec).map_err(|e| anyhow!("{e}"))
            }
            DataSource::Directory { path } => {
                dataio::load_directory(Path::new(path), img.h, img.w, img.c)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_object() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.batch_size, 32);
        let hy = cfg.hyper().unwrap();
        assert_eq!(hy.trunk.len(), 1);
        assert_eq!(hy.content_downs(), 3);
        assert_eq!(hy.a * hy.b * hy.k, 8);
        assert!(matches!(cfg.data, DataSource::Synthetic { per_domain: 2000 }));
    }

    #[test]
    fn unknown_keys_rejected_with_name() {
        let err = Config::from_json(r#"{"learning_rate": 0.1}"#).unwrap_err();
        assert!(format!("{err:#}").contains("learning_rate"), "{err:#}");
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = Config::from_json(
            r#"{
                "variant": "one-disc",
                "image": {"h": 16, "w": 16, "c": 1},
                "latent": {"a": 4, "b": 4, "j": 2, "k": 4},
                "epochs": 2,
                "data": {"kind": "directory", "path": "/tmp/x"}
            }"#,
        )
        .unwrap();
        assert!(matches!(Variant::from(cfg.variant), Variant::OneDisc));
        let hy = cfg.hyper().unwrap();
        assert_eq!(hy.trunk.len(), 1);
        assert_eq!(hy.content_downs(), 1);
    }

    #[test]
    fn inconsistent_geometry_rejected() {
        let err = Config::from_json(
            r#"{"image": {"h": 30, "w": 30, "c": 1}, "latent": {"a": 4, "b": 4, "j": 4, "k": 8}}"#,
        )
        .unwrap_err();
        assert!(format!("{err:#}").contains("power of two"), "{err:#}");
    }
}
