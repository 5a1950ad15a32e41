//! Command-line interface: dataset generation, training, and the
//! inference-time tasks, all driven by a JSON configuration.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use srae_core::checkpoint::Checkpoint;
use srae_core::model::SraeModel;
use srae_core::tasks::{
    encode_dataset, export_encodings, fit_domain_classifier, nn_search, reconstruct, translate,
    Metric,
};
use srae_core::train::{train, Clock};
use srae_core::Tensor;
use std::path::{Path, PathBuf};

use crate::config::Config;
use crate::{dataio, montage, pnm, selftest};

#[derive(Parser)]
#[command(
    name = "srae",
    about = "Split-representation auto-encoder: train, translate, and probe",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-domain shape dataset as PGM files.
    GenData {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory (domain0/, domain1/ are created).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory; overrides the config's data section.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Optional per-step metrics CSV path.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write a montage alternating ground-truth rows and reconstruction rows.
    Reconstruct {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output montage image (PGM/PPM).
        #[arg(long)]
        out: PathBuf,
        /// Number of examples to show.
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Re-render the content of --src in the style of --style.
    Translate {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Content source image.
        #[arg(long)]
        src: PathBuf,
        /// Style source image.
        #[arg(long)]
        style: PathBuf,
        /// Output image path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidate images by content-code distance to a target image.
    Nn {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Target image.
        #[arg(long)]
        target: PathBuf,
        /// Candidate dataset directory.
        #[arg(long)]
        candidates: PathBuf,
        /// Number of neighbors to print.
        #[arg(short)]
        k: usize,
        /// Distance metric over flattened content codes.
        #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
        metric: MetricArg,
    },
    /// Fit a logistic-regression probe predicting the domain from a code.
    Classify {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Which code to probe: the domain code (zd) or content code (zc).
        #[arg(long, value_enum)]
        field: FieldArg,
        /// Train/test split seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export mean encodings of a dataset as CSV.
    Export {
        /// Trained checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and invariant self-checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    /// Domain code mu_d.
    Zd,
    /// Content code mu_c.
    Zc,
}

struct WallClock(std::time::Instant);

impl Clock for WallClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("in {}", path.display()))
}

fn read_image_for(path: &Path, ckpt: &Checkpoint) -> Result<Tensor> {
    let img = pnm::read_image(path)?;
    let hy = &ckpt.hyper;
    if img.shape() != [hy.image_h, hy.image_w, hy.image_c] {
        bail!(
            "{} has shape {:?}, checkpoint expects {}x{}x{}",
            path.display(),
            img.shape(),
            hy.image_h,
            hy.image_w,
            hy.image_c
        );
    }
    Ok(img)
}

fn model_of(ckpt: &Checkpoint) -> Result<SraeModel> {
    SraeModel::new(ckpt.hyper.clone(), ckpt.variant).map_err(|e| anyhow!("{e}"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = Config::load(&config)?;
            let dataset = cfg.load_dataset(None)?;
            dataio::save_dataset(&out, &dataset)?;
            eprintln!("wrote {} images under {}", dataset.len(), out.display());
        }
        Command::Train { config, data, out, metrics } => {
            let cfg = Config::load(&config)?;
            let hyper = cfg.hyper()?;
            let dataset = cfg.load_dataset(data.as_deref())?;
            let clock = WallClock(std::time::Instant::now());
            let (ckpt, log) = train(&hyper, &cfg.train_config(), &dataset, &clock)
                .map_err(|e| anyhow!("{e}"))?;
            std::fs::write(&out, ckpt.to_bytes())
                .with_context(|| format!("cannot write {}", out.display()))?;
            if let Some(metrics) = metrics {
                std::fs::write(&metrics, log.to_csv())
                    .with_context(|| format!("cannot write {}", metrics.display()))?;
            }
            let last = log.records().last().expect("at least one training step");
            eprintln!(
                "trained {} steps (final l_r {:.4}); checkpoint at {}",
                last.step,
                last.l_r,
                out.display()
            );
        }
        Command::Reconstruct { ckpt, data, out, count } => {
            let ckpt = read_checkpoint(&ckpt)?;
            let hy = &ckpt.hyper;
            let dataset = dataio::load_directory(&data, hy.image_h, hy.image_w, hy.image_c)?;
            let model = model_of(&ckpt)?;
            let n = count.min(dataset.len()).max(1);
            let mut pairs = Vec::with_capacity(n);
            // Spread picks over the whole set so every domain appears.
            for i in 0..n {
                let idx = i * dataset.len() / n;
                let x = &dataset.images[idx];
                let x_hat = reconstruct(&model, &ckpt.params, x).map_err(|e| anyhow!("{e}"))?;
                pairs.push((x.clone(), x_hat));
            }
            let sheet = montage::pair_montage(&pairs, 8.min(n))?;
            pnm::write_image(&out, &sheet)?;
            eprintln!("wrote montage of {n} pairs to {}", out.display());
        }
        Command::Translate { ckpt, src, style, out } => {
            let ckpt = read_checkpoint(&ckpt)?;
            let src = read_image_for(&src, &ckpt)?;
            let style = read_image_for(&style, &ckpt)?;
            let model = model_of(&ckpt)?;
            let image =
                translate(&model, &ckpt.params, &src, &style).map_err(|e| anyhow!("{e}"))?;
            pnm::write_image(&out, &image)?;
        }
        Command::Nn { ckpt, target, candidates, k, metric } => {
            let ckpt = read_checkpoint(&ckpt)?;
            let hy = &ckpt.hyper;
            let target = read_image_for(&target, &ckpt)?;
            let dataset =
                dataio::load_directory(&candidates, hy.image_h, hy.image_w, hy.image_c)?;
            let model = model_of(&ckpt)?;
            let corpus = encode_dataset(&model, &ckpt.params, &dataset)
                .map_err(|e| anyhow!("{e}"))?;
            let query = model
                .encode(&ckpt.params, &target, None, None)
                .map_err(|e| anyhow!("{e}"))?;
            let metric = match metric {
                MetricArg::Euclidean => Metric::Euclidean,
                MetricArg::Cosine => Metric::Cosine,
            };
            let ranked = nn_search(query.mu_c.data(), &corpus, k, metric)
                .map_err(|e| anyhow!("{e}"))?;
            println!("rank\tindex\tdomain\tdistance");
            for (rank, (idx, dist)) in ranked.iter().enumerate() {
                println!("{}\t{}\t{}\t{}", rank + 1, idx, corpus[*idx].domain, dist);
            }
        }
        Command::Classify { ckpt, data, field, seed } => {
            let ckpt = read_checkpoint(&ckpt)?;
            let hy = &ckpt.hyper;
            let dataset = dataio::load_directory(&data, hy.image_h, hy.image_w, hy.image_c)?;
            let model = model_of(&ckpt)?;
            let records =
                encode_dataset(&model, &ckpt.params, &dataset).map_err(|e| anyhow!("{e}"))?;
            let features: Vec<Vec<f32>> = records
                .iter()
                .map(|r| match field {
                    FieldArg::Zd => r.z_d.clone(),
                    FieldArg::Zc => r.z_c.clone(),
                })
                .collect();
            let labels: Vec<usize> = records.iter().map(|r| r.domain).collect();
            let clf = fit_domain_classifier(&features, &labels, dataset.m, seed)
                .map_err(|e| anyhow!("{e}"))?;
            println!("train_accuracy\t{:.4}", clf.train_accuracy);
            println!("test_accuracy\t{:.4}", clf.test_accuracy);
        }
        Command::Export { ckpt, data, out } => {
            let ckpt = read_checkpoint(&ckpt)?;
            let hy = &ckpt.hyper;
            let dataset = dataio::load_directory(&data, hy.image_h, hy.image_w, hy.image_c)?;
            let model = model_of(&ckpt)?;
            let records =
                encode_dataset(&model, &ckpt.params, &dataset).map_err(|e| anyhow!("{e}"))?;
            let csv = export_encodings(&records).map_err(|e| anyhow!("{e}"))?;
            std::fs::write(&out, csv)
                .with_context(|| format!("cannot write {}", out.display()))?;
        }
        Command::Selftest => selftest::run()?,
    }
    Ok(())
}
