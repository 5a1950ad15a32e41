//! Dataset directory IO: `<root>/domain<i>/<name>.pgm|ppm`, binary codecs,
//! area-average rescaling to the configured size.

use anyhow::{bail, Context, Result};
use srae_core::data::Dataset;
use srae_core::Tensor;
use std::path::Path;

use crate::pnm;

/// Area-average (box filter) resample of an `[h, w, c]` image to
/// `target_h x target_w`. Exact for constant images and for integer
/// downscale factors; fractional boxes use proportional edge weights.
pub fn resize_area(image: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor> {
    let shape = image.shape();
    let (ih, iw, c) = (shape[0], shape[1], shape[2]);
    if ih == target_h && iw == target_w {
        return Ok(image.clone());
    }
    let data = image.data();
    let mut out = vec![0.0f32; target_h * target_w * c];
    let sy = ih as f64 / target_h as f64;
    let sx = iw as f64 / target_w as f64;
    for oy in 0..target_h {
        let y0 = oy as f64 * sy;
        let y1 = (oy + 1) as f64 * sy;
        for ox in 0..target_w {
            let x0 = ox as f64 * sx;
            let x1 = (ox + 1) as f64 * sx;
            for ch in 0..c {
                let mut acc = 0.0f64;
                let mut area = 0.0f64;
                let mut iy = y0.floor() as usize;
                while (iy as f64) < y1 && iy < ih {
                    let wy = (y1.min((iy + 1) as f64) - y0.max(iy as f64)).max(0.0);
                    let mut ix = x0.floor() as usize;
                    while (ix as f64) < x1 && ix < iw {
                        let wx = (x1.min((ix + 1) as f64) - x0.max(ix as f64)).max(0.0);
                        acc += wy * wx * data[(iy * iw + ix) * c + ch] as f64;
                        area += wy * wx;
                        ix += 1;
                    }
                    iy += 1;
                }
                out[(oy * target_w + ox) * c + ch] = (acc / area) as f32;
            }
        }
    }
    Tensor::from_vec(vec![target_h, target_w, c], out).map_err(|e| anyhow::anyhow!("{e}"))
}

/// Loads a labeled dataset from `<root>/domain0/`, `<root>/domain1/`, ...
/// Images are rescaled to `h x w` and must all share the channel count `c`.
/// Ordering is deterministic: domain index, then lexicographic filename.
pub fn load_directory(root: &Path, h: usize, w: usize, c: usize) -> Result<Dataset> {
    if !root.is_dir() {
        bail!("dataset root {} is not a directory", root.display());
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut m = 0usize;
    loop {
        let dir = root.join(format!("domain{m}"));
        if !dir.is_dir() {
            break;
        }
        let mut names: Vec<_> = std::fs::read_dir(&dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| {
                let lower = n.to_lowercase();
                lower.ends_with(".pgm") || lower.ends_with(".ppm")
            })
            .collect();
        names.sort();
        if names.is_empty() {
            bail!("domain directory {} contains no .pgm/.ppm images", dir.display());
        }
        for name in names {
            let path = dir.join(&name);
            let img = pnm::read_image(&path)?;
            if img.shape()[2] != c {
                bail!(
                    "{} has {} channels, dataset is configured for {c}",
                    path.display(),
                    img.shape()[2]
                );
            }
            images.push(resize_area(&img, h, w)?);
            labels.push(m);
        }
        m += 1;
    }
    if m < 2 {
        bail!(
            "need at least domain0/ and domain1/ under {} (found {m})",
            root.display()
        );
    }
    Ok(Dataset { images, labels, m, descriptors: None })
}

/// Writes a dataset as `<root>/domain<i>/<index>.pgm|ppm`.
pub fn save_dataset(root: &Path, dataset: &Dataset) -> Result<()> {
    let mut counters = vec![0usize; dataset.m];
    for (img, &label) in dataset.images.iter().zip(&dataset.labels) {
        let dir = root.join(format!("domain{label}"));
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))?;
        let ext = if img.shape()[2] == 3 { "ppm" } else { "pgm" };
        let path = dir.join(format!("{:05}.{ext}", counters[label]));
        counters[label] += 1;
        pnm::write_image(&path, img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use srae_core::data::{generate_synthetic, SynthSpec};

    #[test]
    fn constant_image_resizes_to_same_constant() {
        let img = Tensor::from_vec(vec![64, 64, 1], vec![0.42; 64 * 64]).unwrap();
        let small = resize_area(&img, 32, 32).unwrap();
        assert!(small.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
        let odd = resize_area(&img, 20, 24).unwrap();
        assert!(odd.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn integer_downscale_is_exact_block_mean() {
        let img = Tensor::from_vec(vec![2, 2, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let one = resize_area(&img, 1, 1).unwrap();
        assert!((one.data()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn directory_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(&SynthSpec::desk_default(4, 0)).unwrap();
        save_dataset(tmp.path(), &ds).unwrap();
        let back = load_directory(tmp.path(), 32, 32, 1).unwrap();
        assert_eq!(back.len(), 8);
        assert_eq!(back.labels, ds.labels);
        for (a, b) in ds.images.iter().zip(&back.images) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6, "{x} vs {y}");
            }
        }
        // Save-load-save is byte stable.
        let tmp2 = tempfile::tempdir().unwrap();
        save_dataset(tmp2.path(), &back).unwrap();
        let again = load_directory(tmp2.path(), 32, 32, 1).unwrap();
        assert_eq!(back, again);
    }

    #[test]
    fn missing_domains_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::create_dir(tmp.path().join("domain0")).unwrap();
        assert!(load_directory(tmp.path(), 32, 32, 1).is_err());
    }
}
