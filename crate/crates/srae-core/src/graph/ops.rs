//! The fixed operator set: forward kernels (generic over storage width) and
//! reverse-mode gradients (f32 values, f64 adjoints).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{GTensor, Scalar};

/// Operation kinds. Attributes that shape the computation (stride, padding,
/// slopes) live on the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// 2-D convolution over `[h, w, c_in]` with kernel `[kh, kw, c_in, c_out]`
    /// and bias `[c_out]`; zero padding.
    Conv2d { stride: usize, pad: usize },
    /// Nearest-neighbor upsample by 2 in both spatial dimensions.
    UpsampleNearest2,
    /// Fully connected: flattened input of length `in`, weight `[in, out]`,
    /// bias `[out]`.
    Dense,
    LeakyRelu { slope: f32 },
    Sigmoid,
    Tanh,
    Exp,
    Log,
    /// Elementwise `max(x, min)`.
    ClampMin { min: f32 },
    /// Softmax over the last axis.
    SoftmaxLast,
    Add,
    Sub,
    Mul,
    /// `factor * x`.
    Scale { factor: f32 },
    /// `x + value` elementwise.
    AddScalar { value: f32 },
    /// Broadcast a `c`-element tensor to `[rows, cols, c]`.
    TileSpatial { rows: usize, cols: usize },
    /// `[h, w, c]` -> `[1, 1, c]` spatial mean.
    GlobalAvgPool,
    /// Concatenate two `[h, w, c]` tensors along the channel axis.
    ConcatChannels,
    /// Sum of squares, scalar output.
    SquaredL2,
    /// Mean over all elements, scalar output.
    MeanAll,
    /// Sum over all elements, scalar output.
    SumAll,
    Reshape { shape: Vec<usize> },
    /// Test fixture: identity forward whose backward is deliberately wrong
    /// (adjoint scaled by 3). Exists so the finite-difference checker has a
    /// negative control.
    #[doc(hidden)]
    WrongGradFixture,
}

impl OpKind {
    pub(crate) fn arity(&self) -> usize {
        match self {
            OpKind::Conv2d { .. } | OpKind::Dense => 3,
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::ConcatChannels => 2,
            _ => 1,
        }
    }

    pub(crate) fn forward<S: Scalar>(&self, ins: &[&GTensor<S>]) -> Result<GTensor<S>> {
        match self {
            OpKind::Conv2d { stride, pad } => conv2d_fwd(ins[0], ins[1], ins[2], *stride, *pad),
            OpKind::UpsampleNearest2 => upsample2_fwd(ins[0]),
            OpKind::Dense => dense_fwd(ins[0], ins[1], ins[2]),
            OpKind::LeakyRelu { slope } => {
                let s = *slope as f64;
                Ok(map_unary(ins[0], |x| if x >= 0.0 { x } else { s * x }))
            }
            OpKind::Sigmoid => Ok(map_unary(ins[0], |x| 1.0 / (1.0 + libm::exp(-x)))),
            OpKind::Tanh => Ok(map_unary(ins[0], libm::tanh)),
            OpKind::Exp => Ok(map_unary(ins[0], libm::exp)),
            OpKind::Log => Ok(map_unary(ins[0], libm::log)),
            OpKind::ClampMin { min } => {
                let m = *min as f64;
                Ok(map_unary(ins[0], |x| if x < m { m } else { x }))
            }
            OpKind::SoftmaxLast => softmax_fwd(ins[0]),
            OpKind::Add => map_binary(ins[0], ins[1], |a, b| a + b),
            OpKind::Sub => map_binary(ins[0], ins[1], |a, b| a - b),
            OpKind::Mul => map_binary(ins[0], ins[1], |a, b| a * b),
            OpKind::Scale { factor } => {
                let f = *factor as f64;
                Ok(map_unary(ins[0], |x| f * x))
            }
            OpKind::AddScalar { value } => {
                let v = *value as f64;
                Ok(map_unary(ins[0], |x| x + v))
            }
            OpKind::TileSpatial { rows, cols } => tile_fwd(ins[0], *rows, *cols),
            OpKind::GlobalAvgPool => gap_fwd(ins[0]),
            OpKind::ConcatChannels => concat_fwd(ins[0], ins[1]),
            OpKind::SquaredL2 => {
                let mut acc = 0.0f64;
                for v in ins[0].data() {
                    let x = v.to_f64();
                    acc += x * x;
                }
                Ok(GTensor::scalar(S::from_f64(acc)))
            }
            OpKind::MeanAll => {
                let mut acc = 0.0f64;
                for v in ins[0].data() {
                    acc += v.to_f64();
                }
                Ok(GTensor::scalar(S::from_f64(acc / ins[0].numel() as f64)))
            }
            OpKind::SumAll => {
                let mut acc = 0.0f64;
                for v in ins[0].data() {
                    acc += v.to_f64();
                }
                Ok(GTensor::scalar(S::from_f64(acc)))
            }
            OpKind::Reshape { shape } => ins[0].reshaped(shape.clone()),
            OpKind::WrongGradFixture => Ok(map_unary(ins[0], |x| x)),
        }
    }

    /// Adjoint contributions for each input. `need[i] == false` skips the
    /// work for input `i` and returns `None` in that slot.
    pub(crate) fn backward(
        &self,
        ins: &[&GTensor<f32>],
        out: &GTensor<f32>,
        adj: &[f64],
        need: &[bool],
    ) -> Vec<Option<Vec<f64>>> {
        match self {
            OpKind::Conv2d { stride, pad } => conv2d_bwd(ins, adj, need, *stride, *pad),
            OpKind::UpsampleNearest2 => vec![opt(need[0], || upsample2_bwd(ins[0], adj))],
            OpKind::Dense => dense_bwd(ins, adj, need),
            OpKind::LeakyRelu { slope } => {
                let s = *slope as f64;
                vec![opt(need[0], || {
                    zip_in(ins[0], adj, |x, a| if x >= 0.0 { a } else { s * a })
                })]
            }
            OpKind::Sigmoid => vec![opt(need[0], || {
                zip_out(out, adj, |y, a| a * y * (1.0 - y))
            })],
            OpKind::Tanh => vec![opt(need[0], || zip_out(out, adj, |y, a| a * (1.0 - y * y)))],
            OpKind::Exp => vec![opt(need[0], || zip_out(out, adj, |y, a| a * y))],
            OpKind::Log => vec![opt(need[0], || zip_in(ins[0], adj, |x, a| a / x))],
            OpKind::ClampMin { min } => {
                let m = *min as f64;
                vec![opt(need[0], || {
                    zip_in(ins[0], adj, |x, a| if x > m { a } else { 0.0 })
                })]
            }
            OpKind::SoftmaxLast => vec![opt(need[0], || softmax_bwd(out, adj))],
            OpKind::Add => vec![
                opt(need[0], || adj.to_vec()),
                opt(need[1], || adj.to_vec()),
            ],
            OpKind::Sub => vec![
                opt(need[0], || adj.to_vec()),
                opt(need[1], || adj.iter().map(|a| -a).collect()),
            ],
            OpKind::Mul => vec![
                opt(need[0], || zip_in(ins[1], adj, |x, a| x * a)),
                opt(need[1], || zip_in(ins[0], adj, |x, a| x * a)),
            ],
            OpKind::Scale { factor } => {
                let f = *factor as f64;
                vec![opt(need[0], || adj.iter().map(|a| f * a).collect())]
            }
            OpKind::AddScalar { .. } => vec![opt(need[0], || adj.to_vec())],
            OpKind::TileSpatial { rows, cols } => {
                vec![opt(need[0], || tile_bwd(ins[0], adj, *rows, *cols))]
            }
            OpKind::GlobalAvgPool => vec![opt(need[0], || gap_bwd(ins[0], adj))],
            OpKind::ConcatChannels => concat_bwd(ins, adj, need),
            OpKind::SquaredL2 => vec![opt(need[0], || {
                ins[0]
                    .data()
                    .iter()
                    .map(|x| 2.0 * (*x as f64) * adj[0])
                    .collect()
            })],
            OpKind::MeanAll => {
                let n = ins[0].numel() as f64;
                vec![opt(need[0], || vec![adj[0] / n; ins[0].numel()])]
            }
            OpKind::SumAll => vec![opt(need[0], || vec![adj[0]; ins[0].numel()])],
            OpKind::Reshape { .. } => vec![opt(need[0], || adj.to_vec())],
            OpKind::WrongGradFixture => {
                vec![opt(need[0], || adj.iter().map(|a| 3.0 * a).collect())]
            }
        }
    }
}

fn opt<F: FnOnce() -> Vec<f64>>(need: bool, f: F) -> Option<Vec<f64>> {
    if need {
        Some(f())
    } else {
        None
    }
}

fn map_unary<S: Scalar>(x: &GTensor<S>, f: impl Fn(f64) -> f64) -> GTensor<S> {
    let data = x.data().iter().map(|v| S::from_f64(f(v.to_f64()))).collect();
    // Shape preserved, length preserved; constructor checks are re-done by
    // the graph's finiteness scan.
    GTensor::raw(x.shape().to_vec(), data)
}

fn map_binary<S: Scalar>(
    a: &GTensor<S>,
    b: &GTensor<S>,
    f: impl Fn(f64, f64) -> f64,
) -> Result<GTensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "elementwise",
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| S::from_f64(f(x.to_f64(), y.to_f64())))
        .collect();
    Ok(GTensor::raw(a.shape().to_vec(), data))
}

fn zip_in(x: &GTensor<f32>, adj: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    x.data()
        .iter()
        .zip(adj)
        .map(|(v, a)| f(v.to_f64(), *a))
        .collect()
}

fn zip_out(y: &GTensor<f32>, adj: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    y.data()
        .iter()
        .zip(adj)
        .map(|(v, a)| f(v.to_f64(), *a))
        .collect()
}

fn hwc(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::shape(
            what,
            format!("expected a rank-3 [h, w, c] tensor, got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[1], shape[2]))
}

fn conv2d_fwd<S: Scalar>(
    x: &GTensor<S>,
    k: &GTensor<S>,
    b: &GTensor<S>,
    stride: usize,
    pad: usize,
) -> Result<GTensor<S>> {
    let (h, w, ci) = hwc(x.shape(), "conv2d input")?;
    let ks = k.shape();
    if ks.len() != 4 {
        return Err(Error::shape("conv2d", format!("kernel must be rank 4, got {ks:?}")));
    }
    let (kh, kw, kci, co) = (ks[0], ks[1], ks[2], ks[3]);
    if kci != ci {
        return Err(Error::shape(
            "conv2d",
            format!("kernel expects {kci} input channels, input has {ci}"),
        ));
    }
    if b.numel() != co {
        return Err(Error::shape(
            "conv2d",
            format!("bias has {} entries, kernel has {co} output channels", b.numel()),
        ));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            "conv2d",
            format!("input {h}x{w} (pad {pad}) smaller than kernel {kh}x{kw}"),
        ));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;

    let xd = x.data();
    let kd = k.data();
    let mut out = vec![0.0f64; oh * ow * co];
    let mut acc = vec![0.0f64; co];
    for oy in 0..oh {
        for ox in 0..ow {
            for (oc, a) in acc.iter_mut().enumerate() {
                *a = b.data()[oc].to_f64();
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xbase = ((iy as usize) * w + ix as usize) * ci;
                    let kbase = ((ky * kw) + kx) * ci * co;
                    for ic in 0..ci {
                        let xv = xd[xbase + ic].to_f64();
                        let krow = kbase + ic * co;
                        for (oc, a) in acc.iter_mut().enumerate() {
                            *a += xv * kd[krow + oc].to_f64();
                        }
                    }
                }
            }
            let obase = (oy * ow + ox) * co;
            out[obase..obase + co].copy_from_slice(&acc);
        }
    }
    Ok(GTensor::raw(
        vec![oh, ow, co],
        out.into_iter().map(S::from_f64).collect(),
    ))
}

fn conv2d_bwd(
    ins: &[&GTensor<f32>],
    adj: &[f64],
    need: &[bool],
    stride: usize,
    pad: usize,
) -> Vec<Option<Vec<f64>>> {
    let (x, k, b) = (ins[0], ins[1], ins[2]);
    let (h, w, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, _, co) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;

    let mut dx = if need[0] { Some(vec![0.0f64; x.numel()]) } else { None };
    let mut dk = if need[1] { Some(vec![0.0f64; k.numel()]) } else { None };
    let mut db = if need[2] { Some(vec![0.0f64; b.numel()]) } else { None };

    let xd = x.data();
    let kd = k.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let obase = (oy * ow + ox) * co;
            let g = &adj[obase..obase + co];
            if let Some(db) = db.as_mut() {
                for oc in 0..co {
                    db[oc] += g[oc];
                }
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let xbase = ((iy as usize) * w + ix as usize) * ci;
                    let kbase = ((ky * kw) + kx) * ci * co;
                    for ic in 0..ci {
                        let krow = kbase + ic * co;
                        if let Some(dx) = dx.as_mut() {
                            let mut acc = 0.0f64;
                            for oc in 0..co {
                                acc += g[oc] * kd[krow + oc] as f64;
                            }
                            dx[xbase + ic] += acc;
                        }
                        if let Some(dk) = dk.as_mut() {
                            let xv = xd[xbase + ic] as f64;
                            for oc in 0..co {
                                dk[krow + oc] += xv * g[oc];
                            }
                        }
                    }
                }
            }
        }
    }
    vec![dx, dk, db]
}

fn dense_fwd<S: Scalar>(x: &GTensor<S>, w: &GTensor<S>, b: &GTensor<S>) -> Result<GTensor<S>> {
    let ws = w.shape();
    if ws.len() != 2 {
        return Err(Error::shape("dense", format!("weight must be rank 2, got {ws:?}")));
    }
    let (din, dout) = (ws[0], ws[1]);
    if x.numel() != din {
        return Err(Error::shape(
            "dense",
            format!("input has {} elements, weight expects {din}", x.numel()),
        ));
    }
    if b.numel() != dout {
        return Err(Error::shape(
            "dense",
            format!("bias has {} entries, weight outputs {dout}", b.numel()),
        ));
    }
    let mut acc: Vec<f64> = b.data().iter().map(|v| v.to_f64()).collect();
    let wd = w.data();
    for (i, xv) in x.data().iter().enumerate() {
        let xv = xv.to_f64();
        let row = i * dout;
        for (o, a) in acc.iter_mut().enumerate() {
            *a += xv * wd[row + o].to_f64();
        }
    }
    Ok(GTensor::raw(vec![dout], acc.into_iter().map(S::from_f64).collect()))
}

fn dense_bwd(ins: &[&GTensor<f32>], adj: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
    let (x, w, _b) = (ins[0], ins[1], ins[2]);
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let wd = w.data();
    let dx = opt(need[0], || {
        let mut dx = vec![0.0f64; din];
        for (i, d) in dx.iter_mut().enumerate() {
            let row = i * dout;
            let mut acc = 0.0f64;
            for (o, a) in adj.iter().enumerate() {
                acc += wd[row + o] as f64 * a;
            }
            *d = acc;
        }
        dx
    });
    let dw = opt(need[1], || {
        let mut dw = vec![0.0f64; din * dout];
        for (i, xv) in x.data().iter().enumerate() {
            let xv = *xv as f64;
            let row = i * dout;
            for (o, a) in adj.iter().enumerate() {
                dw[row + o] = xv * a;
            }
        }
        dw
    });
    let db = opt(need[2], || adj.to_vec());
    vec![dx, dw, db]
}

fn upsample2_fwd<S: Scalar>(x: &GTensor<S>) -> Result<GTensor<S>> {
    let (h, w, c) = hwc(x.shape(), "upsample")?;
    let xd = x.data();
    let mut out = Vec::with_capacity(4 * h * w * c);
    for y in 0..2 * h {
        for xx in 0..2 * w {
            let base = ((y / 2) * w + xx / 2) * c;
            out.extend_from_slice(&xd[base..base + c]);
        }
    }
    Ok(GTensor::raw(vec![2 * h, 2 * w, c], out))
}

fn upsample2_bwd(x: &GTensor<f32>, adj: &[f64]) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut dx = vec![0.0f64; x.numel()];
    for y in 0..2 * h {
        for xx in 0..2 * w {
            let obase = (y * 2 * w + xx) * c;
            let ibase = ((y / 2) * w + xx / 2) * c;
            for ch in 0..c {
                dx[ibase + ch] += adj[obase + ch];
            }
        }
    }
    dx
}

fn softmax_fwd<S: Scalar>(x: &GTensor<S>) -> Result<GTensor<S>> {
    let shape = x.shape();
    let m = *shape.last().ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
    let rows = x.numel() / m;
    let xd = x.data();
    let mut out = vec![0.0f64; x.numel()];
    for r in 0..rows {
        let base = r * m;
        let mut max = f64::NEG_INFINITY;
        for i in 0..m {
            max = max.max(xd[base + i].to_f64());
        }
        let mut sum = 0.0f64;
        for i in 0..m {
            let e = libm::exp(xd[base + i].to_f64() - max);
            out[base + i] = e;
            sum += e;
        }
        for i in 0..m {
            out[base + i] /= sum;
        }
    }
    Ok(GTensor::raw(shape.to_vec(), out.into_iter().map(S::from_f64).collect()))
}

fn softmax_bwd(out: &GTensor<f32>, adj: &[f64]) -> Vec<f64> {
    let m = *out.shape().last().unwrap();
    let rows = out.numel() / m;
    let yd = out.data();
    let mut dx = vec![0.0f64; out.numel()];
    for r in 0..rows {
        let base = r * m;
        let mut dot = 0.0f64;
        for i in 0..m {
            dot += adj[base + i] * yd[base + i] as f64;
        }
        for i in 0..m {
            let y = yd[base + i] as f64;
            dx[base + i] = y * (adj[base + i] - dot);
        }
    }
    dx
}

fn tile_fwd<S: Scalar>(x: &GTensor<S>, rows: usize, cols: usize) -> Result<GTensor<S>> {
    let c = x.numel();
    let xd = x.data();
    let mut out = Vec::with_capacity(rows * cols * c);
    for _ in 0..rows * cols {
        out.extend_from_slice(xd);
    }
    Ok(GTensor::raw(vec![rows, cols, c], out))
}

fn tile_bwd(x: &GTensor<f32>, adj: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let c = x.numel();
    let mut dx = vec![0.0f64; c];
    for p in 0..rows * cols {
        for ch in 0..c {
            dx[ch] += adj[p * c + ch];
        }
    }
    dx
}

fn gap_fwd<S: Scalar>(x: &GTensor<S>) -> Result<GTensor<S>> {
    let (h, w, c) = hwc(x.shape(), "global avg pool")?;
    let xd = x.data();
    let mut acc = vec![0.0f64; c];
    for p in 0..h * w {
        for ch in 0..c {
            acc[ch] += xd[p * c + ch].to_f64();
        }
    }
    let n = (h * w) as f64;
    Ok(GTensor::raw(
        vec![1, 1, c],
        acc.into_iter().map(|v| S::from_f64(v / n)).collect(),
    ))
}

fn gap_bwd(x: &GTensor<f32>, adj: &[f64]) -> Vec<f64> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = (h * w) as f64;
    let mut dx = vec![0.0f64; x.numel()];
    for p in 0..h * w {
        for ch in 0..c {
            dx[p * c + ch] = adj[ch] / n;
        }
    }
    dx
}

fn concat_fwd<S: Scalar>(a: &GTensor<S>, b: &GTensor<S>) -> Result<GTensor<S>> {
    let (h, w, c1) = hwc(a.shape(), "concat lhs")?;
    let (h2, w2, c2) = hwc(b.shape(), "concat rhs")?;
    if (h, w) != (h2, w2) {
        return Err(Error::shape(
            "concat",
            format!("spatial dims differ: {h}x{w} vs {h2}x{w2}"),
        ));
    }
    let mut out = Vec::with_capacity(h * w * (c1 + c2));
    for p in 0..h * w {
        out.extend_from_slice(&a.data()[p * c1..(p + 1) * c1]);
        out.extend_from_slice(&b.data()[p * c2..(p + 1) * c2]);
    }
    Ok(GTensor::raw(vec![h, w, c1 + c2], out))
}

fn concat_bwd(ins: &[&GTensor<f32>], adj: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
    let (a, b) = (ins[0], ins[1]);
    let (h, w, c1) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let c2 = b.shape()[2];
    let da = opt(need[0], || {
        let mut da = vec![0.0f64; a.numel()];
        for p in 0..h * w {
            da[p * c1..(p + 1) * c1].copy_from_slice(&adj[p * (c1 + c2)..p * (c1 + c2) + c1]);
        }
        da
    });
    let db = opt(need[1], || {
        let mut db = vec![0.0f64; b.numel()];
        for p in 0..h * w {
            db[p * c2..(p + 1) * c2]
                .copy_from_slice(&adj[p * (c1 + c2) + c1..(p + 1) * (c1 + c2)]);
        }
        db
    });
    vec![da, db]
}
