//! Supervision terms: binary cross-entropy over binned depth/height
//! scores, voxel cross-entropy, and the scene-class affinity losses built
//! from soft precision / recall / specificity.
//!
//! Every function returns the scalar loss together with its analytic
//! gradient; terms with no valid elements contribute zero and say so.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

const CLAMP_EPS: f64 = 1e-12;

/// One evaluated loss term: value, gradient w.r.t. the tensor it consumes,
/// and whether any element was actually scored.
pub struct LossTerm {
    pub value: f64,
    pub grad: Tensor,
    pub scored: bool,
}

/// Binary cross-entropy between per-bin probabilities `[N, D, H, W]` and
/// one-hot targets of the same shape, averaged over valid pixels and bins.
/// `valid` holds one flag per (n, h, w) pixel.
pub fn bce_masked(pred: &Tensor, target: &Tensor, valid: &[bool]) -> Result<LossTerm> {
    let s = pred.shape();
    if s.len() != 4 || target.shape() != s {
        return Err(dim_err!(
            "bce wants matching [N,D,H,W] tensors, got {:?} and {:?}",
            s,
            target.shape()
        ));
    }
    let (n, d, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    if valid.len() != n * plane {
        return Err(dim_err!(
            "bce validity holds {} flags, want {}",
            valid.len(),
            n * plane
        ));
    }
    let valid_pixels = valid.iter().filter(|&&v| v).count();
    let mut grad = Tensor::zeros(s);
    if valid_pixels == 0 {
        return Ok(LossTerm {
            value: 0.0,
            grad,
            scored: false,
        });
    }
    let count = (valid_pixels * d) as f64;
    let p = pred.data();
    let t = target.data();
    let g = grad.data_mut();
    let mut loss = 0.0;
    for ni in 0..n {
        for pix in 0..plane {
            if !valid[ni * plane + pix] {
                continue;
            }
            for di in 0..d {
                let idx = (ni * d + di) * plane + pix;
                let ph = p[idx].clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
                let ti = t[idx];
                loss -= ti * ph.ln() + (1.0 - ti) * (1.0 - ph).ln();
                // Clamped coordinates sit in a constant region: zero slope.
                if p[idx] > CLAMP_EPS && p[idx] < 1.0 - CLAMP_EPS {
                    g[idx] = (-ti / ph + (1.0 - ti) / (1.0 - ph)) / count;
                }
            }
        }
    }
    Ok(LossTerm {
        value: loss / count,
        grad,
        scored: true,
    })
}

/// Cross-entropy over per-voxel class logits `[B, classes, Z, Y, X]`
/// against `u8` labels (length `B*Z*Y*X`), averaged over scored voxels.
/// The gradient is `(softmax - onehot) / count`.
pub fn ce_from_logits(logits: &Tensor, labels: &[u8], mask: Option<&[bool]>) -> Result<LossTerm> {
    let s = logits.shape();
    if s.len() != 5 {
        return Err(dim_err!("ce wants [B,classes,Z,Y,X] logits, got {s:?}"));
    }
    let (b, classes) = (s[0], s[1]);
    let voxels = s[2] * s[3] * s[4];
    if labels.len() != b * voxels {
        return Err(dim_err!(
            "ce labels hold {} voxels, want {}",
            labels.len(),
            b * voxels
        ));
    }
    if let Some(m) = mask {
        if m.len() != labels.len() {
            return Err(dim_err!(
                "ce mask holds {} flags, want {}",
                m.len(),
                labels.len()
            ));
        }
    }
    let mut grad = Tensor::zeros(s);
    let count = match mask {
        Some(m) => m.iter().filter(|&&v| v).count(),
        None => labels.len(),
    };
    if count == 0 {
        return Ok(LossTerm {
            value: 0.0,
            grad,
            scored: false,
        });
    }
    let x = logits.data();
    let g = grad.data_mut();
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for bi in 0..b {
        for vx in 0..voxels {
            if let Some(m) = mask {
                if !m[bi * voxels + vx] {
                    continue;
                }
            }
            let label = labels[bi * voxels + vx] as usize;
            debug_assert!(label < classes);
            let base = bi * classes * voxels + vx;
            let mut mx = f64::NEG_INFINITY;
            for c in 0..classes {
                mx = mx.max(x[base + c * voxels]);
            }
            let mut se = 0.0;
            for c in 0..classes {
                se += (x[base + c * voxels] - mx).exp();
            }
            let lse = mx + se.ln();
            loss += lse - x[base + label * voxels];
            for c in 0..classes {
                let p = (x[base + c * voxels] - mx).exp() / se;
                let t = if c == label { 1.0 } else { 0.0 };
                g[base + c * voxels] = (p - t) * inv;
            }
        }
    }
    Ok(LossTerm {
        value: loss * inv,
        grad,
        scored: true,
    })
}

/// Per-class soft affinity loss over probabilities `[B, classes, Z, Y, X]`:
/// for each class present in the ground truth,
/// `-(ln P + ln R + ln S)` with `P = sum(p*g)/sum(p)`, `R = sum(p*g)/sum(g)`
/// and `S = sum((1-p)(1-g))/sum(1-g)`; terms with zero denominators are
/// skipped and the total is averaged over the classes that contributed.
/// The returned gradient is w.r.t. the probability tensor.
pub fn sem_scal(probs: &Tensor, labels: &[u8], mask: Option<&[bool]>) -> Result<LossTerm> {
    let s = probs.shape();
    if s.len() != 5 {
        return Err(dim_err!(
            "sem_scal wants [B,classes,Z,Y,X] probabilities, got {s:?}"
        ));
    }
    let (b, classes) = (s[0], s[1]);
    let voxels = s[2] * s[3] * s[4];
    let scored: Vec<usize> = (0..b * voxels)
        .filter(|&i| mask.map_or(true, |m| m[i]))
        .collect();
    let mut grad = Tensor::zeros(s);
    if scored.is_empty() {
        return Ok(LossTerm {
            value: 0.0,
            grad,
            scored: false,
        });
    }
    let p = probs.data();
    let g = grad.data_mut();
    let mut total = 0.0;
    let mut class_count = 0usize;
    for c in 0..classes {
        // Gather per-class sums over scored voxels.
        let mut nom = 0.0; // sum p*g
        let mut sum_p = 0.0;
        let mut sum_g = 0.0;
        let mut s_nom = 0.0; // sum (1-p)(1-g)
        let mut sum_ng = 0.0; // sum (1-g)
        for &i in &scored {
            let (bi, vx) = (i / voxels, i % voxels);
            let pi = p[(bi * classes + c) * voxels + vx];
            let gi = if labels[i] as usize == c { 1.0 } else { 0.0 };
            nom += pi * gi;
            sum_p += pi;
            sum_g += gi;
            s_nom += (1.0 - pi) * (1.0 - gi);
            sum_ng += 1.0 - gi;
        }
        if sum_g <= 0.0 {
            continue; // class absent from the ground truth
        }
        class_count += 1;
        let mut class_loss = 0.0;
        let precision_ok = sum_p > 0.0 && nom > 0.0;
        if precision_ok {
            class_loss -= (nom / sum_p).ln();
        }
        // Recall denominator sum_g is positive here.
        let recall_ok = nom > 0.0;
        if recall_ok {
            class_loss -= (nom / sum_g).ln();
        }
        let spec_ok = sum_ng > 0.0 && s_nom > 0.0;
        if spec_ok {
            class_loss -= (s_nom / sum_ng).ln();
        }
        total += class_loss;
        for &i in &scored {
            let (bi, vx) = (i / voxels, i % voxels);
            let idx = (bi * classes + c) * voxels + vx;
            let gi = if labels[i] as usize == c { 1.0 } else { 0.0 };
            let mut d = 0.0;
            if precision_ok {
                d += -gi / nom + 1.0 / sum_p;
            }
            if recall_ok {
                d += -gi / nom;
            }
            if spec_ok {
                d += (1.0 - gi) / s_nom;
            }
            g[idx] += d;
        }
    }
    if class_count == 0 {
        return Ok(LossTerm {
            value: 0.0,
            grad: Tensor::zeros(s),
            scored: false,
        });
    }
    let inv = 1.0 / class_count as f64;
    for v in grad.data_mut() {
        *v *= inv;
    }
    Ok(LossTerm {
        value: total * inv,
        grad,
        scored: true,
    })
}

/// Geometric affinity: the occupied/empty collapse of [`sem_scal`].
/// Occupancy probability is `1 - p[empty_class]`; the gradient is routed
/// through the empty channel.
pub fn geo_scal(
    probs: &Tensor,
    labels: &[u8],
    mask: Option<&[bool]>,
    empty_class: u8,
) -> Result<LossTerm> {
    let s = probs.shape();
    if s.len() != 5 {
        return Err(dim_err!(
            "geo_scal wants [B,classes,Z,Y,X] probabilities, got {s:?}"
        ));
    }
    let (b, classes) = (s[0], s[1]);
    let voxels = s[2] * s[3] * s[4];
    let scored: Vec<usize> = (0..b * voxels)
        .filter(|&i| mask.map_or(true, |m| m[i]))
        .collect();
    let mut grad = Tensor::zeros(s);
    if scored.is_empty() {
        return Ok(LossTerm {
            value: 0.0,
            grad,
            scored: false,
        });
    }
    let p = probs.data();
    let mut nom = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    let mut s_nom = 0.0;
    let mut sum_ng = 0.0;
    for &i in &scored {
        let (bi, vx) = (i / voxels, i % voxels);
        let p_occ = 1.0 - p[(bi * classes + empty_class as usize) * voxels + vx];
        let g_occ = if labels[i] != empty_class { 1.0 } else { 0.0 };
        nom += p_occ * g_occ;
        sum_p += p_occ;
        sum_g += g_occ;
        s_nom += (1.0 - p_occ) * (1.0 - g_occ);
        sum_ng += 1.0 - g_occ;
    }
    let precision_ok = sum_p > 0.0 && nom > 0.0;
    let recall_ok = sum_g > 0.0 && nom > 0.0;
    let spec_ok = sum_ng > 0.0 && s_nom > 0.0;
    let mut loss = 0.0;
    if precision_ok {
        loss -= (nom / sum_p).ln();
    }
    if recall_ok {
        loss -= (nom / sum_g).ln();
    }
    if spec_ok {
        loss -= (s_nom / sum_ng).ln();
    }
    if !(precision_ok || recall_ok || spec_ok) {
        return Ok(LossTerm {
            value: 0.0,
            grad,
            scored: false,
        });
    }
    let g = grad.data_mut();
    for &i in &scored {
        let (bi, vx) = (i / voxels, i % voxels);
        let g_occ = if labels[i] != empty_class { 1.0 } else { 0.0 };
        let mut d_occ = 0.0;
        if precision_ok {
            d_occ += -g_occ / nom + 1.0 / sum_p;
        }
        if recall_ok {
            d_occ += -g_occ / nom;
        }
        if spec_ok {
            d_occ += (1.0 - g_occ) / s_nom;
        }
        // p_occ = 1 - p_empty, so the slope w.r.t. the empty channel flips.
        g[(bi * classes + empty_class as usize) * voxels + vx] = -d_occ;
    }
    Ok(LossTerm {
        value: loss,
        grad,
        scored: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::ops::softmax;
    use crate::rng::SplitMix64;

    #[test]
    fn bce_perfect_prediction_is_zero() {
        // One-hot probabilities equal to the target.
        let pred = Tensor::from_vec(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let target = pred.clone();
        let term = bce_masked(&pred, &target, &[true]).unwrap();
        assert!(term.value.abs() < 1e-9);
    }

    #[test]
    fn bce_skips_invalid_pixels() {
        let pred = Tensor::filled(&[1, 2, 1, 2], 0.5);
        let mut target = Tensor::zeros(&[1, 2, 1, 2]);
        target.set(&[0, 0, 0, 0], 1.0);
        target.set(&[0, 1, 0, 1], 1.0);
        let all = bce_masked(&pred, &target, &[true, true]).unwrap();
        let one = bce_masked(&pred, &target, &[true, false]).unwrap();
        assert!(all.scored && one.scored);
        // Both pixels have identical per-pixel loss here, so means agree.
        assert!((all.value - one.value).abs() < 1e-12);
        // Gradient of the skipped pixel is zero.
        assert_eq!(one.grad.at(&[0, 0, 0, 1]), 0.0);
        let none = bce_masked(&pred, &target, &[false, false]).unwrap();
        assert_eq!(none.value, 0.0);
        assert!(!none.scored);
    }

    #[test]
    fn ce_uniform_logits_is_log_classes() {
        let logits = Tensor::zeros(&[1, 18, 2, 2, 2]);
        let labels = vec![0u8; 8];
        let term = ce_from_logits(&logits, &labels, None).unwrap();
        assert!((term.value - (18f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn ce_sharp_logits_near_zero() {
        let mut logits = Tensor::filled(&[1, 4, 1, 1, 2], -50.0);
        logits.set(&[0, 1, 0, 0, 0], 50.0);
        logits.set(&[0, 3, 0, 0, 1], 50.0);
        let term = ce_from_logits(&logits, &[1, 3], None).unwrap();
        assert!(term.value.abs() < 1e-9);
    }

    #[test]
    fn ce_mask_restricts_scoring() {
        let mut logits = Tensor::zeros(&[1, 3, 1, 1, 2]);
        logits.set(&[0, 0, 0, 0, 0], 10.0); // voxel 0 confidently class 0
        let labels = vec![0u8, 2u8];
        let masked = ce_from_logits(&logits, &labels, Some(&[true, false])).unwrap();
        assert!(masked.value < 1e-4);
        let unmasked = ce_from_logits(&logits, &labels, None).unwrap();
        assert!(unmasked.value > masked.value);
    }

    #[test]
    fn affinity_two_voxel_hand_evaluation() {
        // Two voxels, two classes; probabilities chosen by hand.
        // p(class 0) = (0.8, 0.3), labels = (0, 1).
        let probs = Tensor::from_vec(&[1, 2, 1, 1, 2], vec![0.8, 0.3, 0.2, 0.7]).unwrap();
        let labels = vec![0u8, 1u8];
        let term = sem_scal(&probs, &labels, None).unwrap();
        // class 0: nom = 0.8, sum_p = 1.1, sum_g = 1, s_nom = (1-0.3) = 0.7, sum_ng = 1
        //   loss0 = -ln(0.8/1.1) - ln(0.8/1) - ln(0.7/1)
        // class 1: nom = 0.7, sum_p = 0.9, sum_g = 1, s_nom = 0.8, sum_ng = 1
        //   loss1 = -ln(0.7/0.9) - ln(0.7) - ln(0.8)
        let l0 = -(0.8f64 / 1.1).ln() - 0.8f64.ln() - 0.7f64.ln();
        let l1 = -(0.7f64 / 0.9).ln() - 0.7f64.ln() - 0.8f64.ln();
        assert!((term.value - (l0 + l1) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn geo_two_voxel_hand_evaluation() {
        // classes = 2 with empty = 1; occupancy prob = 1 - p(empty).
        let probs = Tensor::from_vec(&[1, 2, 1, 1, 2], vec![0.8, 0.3, 0.2, 0.7]).unwrap();
        let labels = vec![0u8, 1u8]; // first occupied, second empty
        let term = geo_scal(&probs, &labels, None, 1).unwrap();
        // p_occ = (0.8, 0.3); g_occ = (1, 0)
        // nom = 0.8, sum_p = 1.1, sum_g = 1, s_nom = (1-0.3)*1 = 0.7, sum_ng = 1
        let want = -(0.8f64 / 1.1).ln() - 0.8f64.ln() - 0.7f64.ln();
        assert!((term.value - want).abs() < 1e-12);
    }

    #[test]
    fn affinity_gradients_match_central_differences() {
        let mut rng = SplitMix64::new(71);
        let logits = rng.uniform_tensor(&[1, 3, 1, 2, 2], -1.0, 1.0);
        let labels = vec![0u8, 1, 1, 2];
        // Check d loss / d logits through softmax + affinity as one scalar map.
        let fwd_sem = |xs: &[Tensor]| {
            let p = softmax(&xs[0], 1)?;
            let t = sem_scal(&p, &[0u8, 1, 1, 2], None)?;
            Ok(Tensor::scalar(t.value))
        };
        let vjp_sem = |xs: &[Tensor], g: &Tensor| {
            let p = softmax(&xs[0], 1)?;
            let t = sem_scal(&p, &[0u8, 1, 1, 2], None)?;
            let gp = t.grad.scale(g.data()[0]);
            Ok(vec![crate::ops::softmax_backward(&p, &gp, 1)])
        };
        GradCheck {
            forward: &fwd_sem,
            vjp: &vjp_sem,
            eps: 1e-6,
            tolerance: 1e-4,
        }
        .run("sem_scal", &[logits.clone()])
        .unwrap();

        let fwd_geo = |xs: &[Tensor]| {
            let p = softmax(&xs[0], 1)?;
            let t = geo_scal(&p, &[0u8, 1, 1, 2], None, 2)?;
            Ok(Tensor::scalar(t.value))
        };
        let vjp_geo = |xs: &[Tensor], g: &Tensor| {
            let p = softmax(&xs[0], 1)?;
            let t = geo_scal(&p, &[0u8, 1, 1, 2], None, 2)?;
            let gp = t.grad.scale(g.data()[0]);
            Ok(vec![crate::ops::softmax_backward(&p, &gp, 1)])
        };
        GradCheck {
            forward: &fwd_geo,
            vjp: &vjp_geo,
            eps: 1e-6,
            tolerance: 1e-4,
        }
        .run("geo_scal", &[logits])
        .unwrap();
        let _ = labels;
    }

    #[test]
    fn bce_gradient_matches_central_differences() {
        let mut rng = SplitMix64::new(73);
        let logits = rng.uniform_tensor(&[1, 3, 2, 2], -1.0, 1.0);
        let mut target = Tensor::zeros(&[1, 3, 2, 2]);
        for pix in 0..4 {
            let b = pix % 3;
            target.data_mut()[b * 4 + pix] = 1.0;
        }
        let valid = vec![true, true, false, true];
        let t2 = target.clone();
        let v2 = valid.clone();
        let fwd = move |xs: &[Tensor]| {
            let p = softmax(&xs[0], 1)?;
            let t = bce_masked(&p, &t2, &v2)?;
            Ok(Tensor::scalar(t.value))
        };
        let t3 = target.clone();
        let v3 = valid.clone();
        let vjp = move |xs: &[Tensor], g: &Tensor| {
            let p = softmax(&xs[0], 1)?;
            let t = bce_masked(&p, &t3, &v3)?;
            let gp = t.grad.scale(g.data()[0]);
            Ok(vec![crate::ops::softmax_backward(&p, &gp, 1)])
        };
        GradCheck {
            forward: &fwd,
            vjp: &vjp,
            eps: 1e-6,
            tolerance: 1e-4,
        }
        .run("bce_masked", &[logits])
        .unwrap();
    }

    #[test]
    fn ce_gradient_matches_central_differences() {
        let mut rng = SplitMix64::new(79);
        let logits = rng.uniform_tensor(&[1, 4, 1, 2, 2], -1.0, 1.0);
        let labels = vec![3u8, 0, 1, 2];
        let mask = vec![true, false, true, true];
        let l2 = labels.clone();
        let m2 = mask.clone();
        let fwd = move |xs: &[Tensor]| {
            let t = ce_from_logits(&xs[0], &l2, Some(&m2))?;
            Ok(Tensor::scalar(t.value))
        };
        let l3 = labels.clone();
        let m3 = mask.clone();
        let vjp = move |xs: &[Tensor], g: &Tensor| {
            let t = ce_from_logits(&xs[0], &l3, Some(&m3))?;
            Ok(vec![t.grad.scale(g.data()[0])])
        };
        GradCheck {
            forward: &fwd,
            vjp: &vjp,
            eps: 1e-6,
            tolerance: 1e-4,
        }
        .run("ce_from_logits", &[logits])
        .unwrap();
    }
}
