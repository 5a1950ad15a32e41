//! Contact-sheet montages: alternating rows of ground-truth and
//! reconstructed/translated images on a single canvas.

use anyhow::{bail, Result};
use srae_core::Tensor;

/// Lays out `pairs` of (ground truth, generated) images as a grid where odd
/// rows hold the ground truth of a chunk and even rows the generated
/// counterparts, `cols` images per row.
pub fn pair_montage(pairs: &[(Tensor, Tensor)], cols: usize) -> Result<Tensor> {
    if pairs.is_empty() || cols == 0 {
        bail!("montage needs at least one image pair and one column");
    }
    let shape = pairs[0].0.shape().to_vec();
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    for (a, b) in pairs {
        if a.shape() != shape.as_slice() || b.shape() != shape.as_slice() {
            bail!("all montage images must share one shape");
        }
    }
    let chunks = pairs.len().div_ceil(cols);
    let rows = chunks * 2;
    let mut out = vec![0.0f32; rows * h * cols * w * c];
    let canvas_w = cols * w;
    for (i, (gt, gen)) in pairs.iter().enumerate() {
        let chunk = i / cols;
        let col = i % cols;
        for (row_in_pair, img) in [(0, gt), (1, gen)] {
            let top = (chunk * 2 + row_in_pair) * h;
            let left = col * w;
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        out[((top + y) * canvas_w + left + x) * c + ch] =
                            img.data()[(y * w + x) * c + ch];
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![rows * h, canvas_w, c], out).map_err(|e| anyhow::anyhow!("{e}"))
}
