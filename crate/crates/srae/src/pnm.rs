//! Minimal binary PGM (P5) / PPM (P6) codec, maxval 255.

use anyhow::{anyhow, bail, Context, Result};
use srae_core::Tensor;
use std::path::Path;

/// Decodes a binary PGM or PPM into an `[h, w, c]` tensor in [0, 1]
/// (c = 1 for PGM, 3 for PPM).
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos).context("missing magic number")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => bail!("unsupported format `{other}` (need binary P5 or P6)"),
    };
    let w: usize = take_token(bytes, &mut pos)
        .context("missing width")?
        .parse()
        .context("bad width")?;
    let h: usize = take_token(bytes, &mut pos)
        .context("missing height")?
        .parse()
        .context("bad height")?;
    let maxval: usize = take_token(bytes, &mut pos)
        .context("missing maxval")?
        .parse()
        .context("bad maxval")?;
    if maxval != 255 {
        bail!("unsupported maxval {maxval} (need 255)");
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| anyhow!("truncated raster: need {need} bytes"))?;
    let data: Vec<f32> = raster.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(vec![h, w, channels], data).map_err(|e| anyhow!("{e}"))
}

/// Encodes an `[h, w, c]` tensor (values clamped to [0, 1]) as binary PGM
/// (c = 1) or PPM (c = 3).
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let shape = image.shape();
    if shape.len() != 3 {
        bail!("expected an [h, w, c] image, got shape {shape:?}");
    }
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => bail!("cannot encode {c}-channel image (need 1 or 3)"),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        let clamped = v.clamp(0.0, 1.0);
        (clamped * 255.0).round() as u8
    }));
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    decode(&bytes).with_context(|| format!("cannot decode {}", path.display()))
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode(image)?;
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn take_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // Skip whitespace and `#` comments (to end of line).
    loop {
        match bytes.get(*pos)? {
            b'#' => {
                while *bytes.get(*pos)? != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}
