//! Losses for the three heads. Everything is evaluated in `f64`.

use crate::error::{Error, Result};

fn check(a: &[f64], targets: &[f64]) -> Result<()> {
    if a.len() != targets.len() {
        return Err(Error::Validation(format!(
            "{} predictions vs {} targets",
            a.len(),
            targets.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Validation("empty loss input".into()));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::Validation(format!("target {t} is not binary")));
    }
    Ok(())
}

#[inline]
fn softplus(z: f64) -> f64 {
    // log(1 + e^z) without overflow.
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy on logits.
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> Result<f64> {
    check(logits, targets)?;
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| softplus(z) - t * z)
        .sum();
    Ok(sum / logits.len() as f64)
}

/// `1 - (2 * sum(p*t) + smooth) / (sum(p) + sum(t) + smooth)`.
pub fn dice_loss(probs: &[f64], targets: &[f64], smooth: f64) -> Result<f64> {
    check(probs, targets)?;
    if !(smooth > 0.0) {
        return Err(Error::Validation(format!("dice smoothing must be positive, got {smooth}")));
    }
    let inter: f64 = probs.iter().zip(targets).map(|(p, t)| p * t).sum();
    let ps: f64 = probs.iter().sum();
    let ts: f64 = targets.iter().sum();
    Ok(1.0 - (2.0 * inter + smooth) / (ps + ts + smooth))
}

/// Dice on `sigmoid(logits)` plus `lambda_b` times BCE on the logits.
pub fn segmentor_loss(logits: &[f64], targets: &[f64], lambda_b: f64, smooth: f64) -> Result<f64> {
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid64(z)).collect();
    Ok(dice_loss(&probs, targets, smooth)? + lambda_b * bce_with_logits(logits, targets)?)
}

/// BCE value and its gradient with respect to the logits.
pub fn bce_with_logits_grad(logits: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = bce_with_logits(logits, targets)?;
    let n = logits.len() as f64;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| (sigmoid64(z) - t) / n)
        .collect();
    Ok((loss, grad))
}

/// Segmentor loss and its analytic gradient with respect to the logits.
pub fn segmentor_loss_grad(
    logits: &[f64],
    targets: &[f64],
    lambda_b: f64,
    smooth: f64,
) -> Result<(f64, Vec<f64>)> {
    let (bce, bce_grad) = bce_with_logits_grad(logits, targets)?;
    let probs: Vec<f64> = logits.iter().map(|&z| sigmoid64(z)).collect();
    let dice = dice_loss(&probs, targets, smooth)?;
    let num: f64 = 2.0 * probs.iter().zip(targets).map(|(p, t)| p * t).sum::<f64>() + smooth;
    let den: f64 = probs.iter().sum::<f64>() + targets.iter().sum::<f64>() + smooth;
    let grad = probs
        .iter()
        .zip(targets)
        .zip(&bce_grad)
        .map(|((&p, &t), &gb)| {
            let d_dice_dp = -(2.0 * t * den - num) / (den * den);
            d_dice_dp * p * (1.0 - p) + lambda_b * gb
        })
        .collect();
    Ok((dice + lambda_b * bce, grad))
}
