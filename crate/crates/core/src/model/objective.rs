//! Multi-mask objective and per-mask targets.

use candle_core::{DType, Tensor, D};
use rand::Rng;

use super::nn::log_softmax;
use super::verbalizer::Verbalizer;
use crate::config::TagTargetMode;
use crate::corpus::Necessity;
use crate::error::{Error, Result};

/// Weighted truth tags (label indices) for one visit of a request.
///
/// `fixed` is the tag drawn once for the request, used in `Fixed` mode.
pub fn multi_tag_target<R: Rng>(tags: &[usize], mode: TagTargetMode, fixed: Option<usize>, rng: &mut R) -> Vec<(usize, f64)> {
    assert!(!tags.is_empty(), "a request needs at least one truth tag");
    match mode {
        TagTargetMode::Sample => vec![(tags[rng.random_range(0..tags.len())], 1.0)],
        TagTargetMode::Soft => {
            let w = 1.0 / tags.len() as f64;
            tags.iter().map(|&t| (t, w)).collect()
        }
        TagTargetMode::Fixed => vec![(fixed.unwrap_or(tags[0]), 1.0)],
    }
}

/// Sparse target per mask: `(token id, mass)` pairs. Topic masks come first.
pub type MaskTargets = Vec<Vec<(u32, f64)>>;

pub fn mask_targets(tag_weights: &[(usize, f64)], necessity: Necessity, verbalizer: &Verbalizer, n_topic: usize) -> MaskTargets {
    let mut out: MaskTargets = vec![Vec::new(); n_topic];
    for &(tag, w) in tag_weights {
        for (slot, &id) in verbalizer.tag_ids(tag).iter().take(n_topic).enumerate() {
            match out[slot].iter_mut().find(|(t, _)| *t == id) {
                Some(e) => e.1 += w,
                None => out[slot].push((id, w)),
            }
        }
    }
    out.push(vec![(verbalizer.necessity_id(necessity), 1.0)]);
    out
}

fn dense(targets: &[MaskTargets], vocab: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let b = targets.len();
    let m = targets.first().map_or(0, |t| t.len());
    let mut data = vec![0f64; b * m * vocab];
    for (bi, ex) in targets.iter().enumerate() {
        if ex.len() != m {
            return Err(Error::Data("examples in a batch disagree on the mask count".into()));
        }
        for (mi, mask) in ex.iter().enumerate() {
            for &(id, w) in mask {
                data[(bi * m + mi) * vocab + id as usize] += w;
            }
        }
    }
    Ok(Tensor::from_vec(data, (b, m, vocab), device)?.to_dtype(dtype)?)
}

/// Batch mean over examples of `-sum_masks sum_v target(v) log p(v)`.
/// `log_probs` is `[B, M, V]`.
pub fn unified_loss(log_probs: &Tensor, targets: &[MaskTargets]) -> Result<Tensor> {
    let (b, _, v) = log_probs.dims3()?;
    let t = dense(targets, v, log_probs.dtype(), log_probs.device())?;
    Ok((log_probs.mul(&t)?.sum_all()?.neg()? / b as f64)?)
}

/// Cross-entropy over two necessity logits `[B, 2]` plus mean binary
/// cross-entropy over tag logits `[B, |L|]`, both averaged over the batch.
pub fn fine_tune_loss(nec_logits: &Tensor, tag_logits: &Tensor, necessity: &[Necessity], tags: &[Vec<usize>]) -> Result<Tensor> {
    let (b, n_tags) = tag_logits.dims2()?;
    let dev = tag_logits.device();
    let dtype = tag_logits.dtype();
    let mut nec = vec![0f64; b * 2];
    for (i, n) in necessity.iter().enumerate() {
        nec[i * 2 + usize::from(*n == Necessity::Unnecessary)] = 1.0;
    }
    let nec = Tensor::from_vec(nec, (b, 2), dev)?.to_dtype(dtype)?;
    let ce = log_softmax(nec_logits)?.mul(&nec)?.sum_all()?.neg()?;
    let mut y = vec![0f64; b * n_tags];
    for (i, ts) in tags.iter().enumerate() {
        for &t in ts {
            y[i * n_tags + t] = 1.0;
        }
    }
    let y = Tensor::from_vec(y, (b, n_tags), dev)?.to_dtype(dtype)?;
    // max(x, 0) - x*y + log(1 + exp(-|x|))
    let x = tag_logits;
    let bce = x
        .relu()?
        .sub(&x.mul(&y)?)?
        .add(&(x.abs()?.neg()?.exp()? + 1.0)?.log()?)?
        .mean(D::Minus1)?
        .sum_all()?;
    Ok((ce.add(&bce)? / b as f64)?)
}
