//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side evaluates the loss with `f64` storage end to end, so the
//! difference quotient is not drowned by `f32` rounding even where the true
//! gradient is zero.
//!
//! Central differences are only a valid oracle where the loss is smooth
//! across the whole `[x-h, x+h]` interval. Kink crossings (leaky-ReLU or
//! clamp corners) are detected two ways: the one-sided secants must agree at
//! each step, and the central differences at two adjacent step scales (10x
//! apart) must agree with each other. Elements that never satisfy both are
//! skipped as inconclusive rather than failed; a genuinely wrong gradient at
//! a smooth point survives both filters and is flagged.

use alloc::string::String;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::{Inputs, NodeId, OpGraph, ParamSource};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Worst observed disagreement for one parameter tensor.
#[derive(Debug, Clone)]
pub struct FdEntry {
    pub param: String,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Elements skipped because the difference interval straddled a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub tol: f64,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &FdEntry> {
        self.entries.iter().filter(move |e| e.max_rel_err > self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

struct Perturbed<'a> {
    base: &'a dyn ParamSource,
    name: &'a str,
    tensor: Tensor,
}

impl ParamSource for Perturbed<'_> {
    fn get_param(&self, name: &str) -> Option<&Tensor> {
        if name == self.name {
            Some(&self.tensor)
        } else {
            self.base.get_param(name)
        }
    }
}

/// Compares analytic gradients of `loss` against central differences with
/// step `h`, for every parameter leaf in the graph. Relative error uses a
/// `max(|analytic|, |numeric|, 1e-8)` denominator.
pub fn finite_diff_check(
    graph: &OpGraph,
    inputs: &Inputs,
    params: &dyn ParamSource,
    loss: NodeId,
    h: f64,
    tol: f64,
) -> Result<FdReport> {
    if h <= 0.0 {
        return Err(Error::contract("finite-difference step must be positive"));
    }
    let (_, grads) = graph.loss_and_grads(inputs, params, loss, &|_| true)?;
    let l_center = graph.eval::<f64>(inputs, params, &[loss])?[0].data()[0];

    let mut entries = Vec::new();
    for name in graph.param_names() {
        let base = params
            .get_param(name)
            .ok_or_else(|| Error::contract(alloc::format!("unbound parameter `{name}`")))?;
        let analytic = &grads[name];
        let mut worst = FdEntry {
            param: name.to_string(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            skipped: 0,
        };
        for i in 0..base.numel() {
            let orig = base.data()[i];
            // One central difference plus the smoothness verdict of its
            // one-sided secants, at a given step.
            let central_at = |h_cur: f64| -> Result<(f64, bool)> {
                let up = ((orig as f64) + h_cur) as f32;
                let down = ((orig as f64) - h_cur) as f32;

                let mut t = base.clone();
                t.data_mut()[i] = up;
                let src = Perturbed { base: params, name, tensor: t };
                let l_plus = graph.eval::<f64>(inputs, &src, &[loss])?[0].data()[0];

                let mut t = base.clone();
                t.data_mut()[i] = down;
                let src = Perturbed { base: params, name, tensor: t };
                let l_minus = graph.eval::<f64>(inputs, &src, &[loss])?[0].data()[0];

                // Secants over the steps actually realized after f32 rounding.
                let fwd = (l_plus - l_center) / (up as f64 - orig as f64);
                let bwd = (l_center - l_minus) / (orig as f64 - down as f64);
                let smooth = (fwd - bwd).abs() <= 0.005 * fwd.abs().max(bwd.abs())
                    || (fwd - bwd).abs() <= 1e-7;
                Ok(((l_plus - l_minus) / (up as f64 - down as f64), smooth))
            };

            // Start at the requested step and shrink. A value is trusted
            // only when the secants agree at two adjacent scales AND the two
            // central differences agree with each other: a kink near an
            // endpoint (or a symmetric pair of kinks) can slip past the
            // secant gate at one scale, but its bias changes drastically
            // under a 10x step change, while a genuinely smooth element
            // converges. Inconclusive elements are skipped, not failed.
            let mut numeric = None;
            let mut prev: Option<(f64, bool)> = None;
            let mut h_cur = h;
            for _ in 0..4 {
                let cur = central_at(h_cur)?;
                if let Some((c_prev, ok_prev)) = prev {
                    let (c_cur, ok_cur) = cur;
                    let consistent = (c_prev - c_cur).abs()
                        <= 0.002 * c_prev.abs().max(c_cur.abs())
                        || (c_prev - c_cur).abs() <= 1e-9;
                    if ok_prev && ok_cur && consistent {
                        numeric = Some(c_cur);
                        break;
                    }
                }
                prev = Some(cur);
                h_cur /= 10.0;
            }
            let Some(numeric) = numeric else {
                worst.skipped += 1;
                continue;
            };
            let an = analytic.data()[i] as f64;
            let rel = (numeric - an).abs() / numeric.abs().max(an.abs()).max(1e-8);
            if rel > worst.max_rel_err {
                worst.max_rel_err = rel;
                worst.worst_index = i;
                worst.analytic = an;
                worst.numeric = numeric;
            }
        }
        entries.push(worst);
    }
    Ok(FdReport { entries, tol })
}
