//! Edge-promoting adversarial objective.
//!
//! The value functions take discriminator probabilities and are meant for
//! reporting and checks. Training uses the logit forms, where
//! `−log σ(z) = softplus(−z)` and `−log(1 − σ(z)) = softplus(z)` stay finite.

use comixify_nn::{Float, Tape, Var};
use ndarray::ArrayViewD;

use crate::error::{Error, Result};

fn check_probs(name: &str, p: &[f64], open_low: bool) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput(format!("no {name} probabilities")));
    }
    for &v in p {
        let low_ok = if open_low { v > 0.0 } else { v >= 0.0 };
        if !(low_ok && v <= 1.0) {
            return Err(Error::Domain(format!("{name} probability {v} out of range")));
        }
    }
    Ok(())
}

fn mean(it: impl Iterator<Item = f64>, n: usize) -> f64 {
    it.sum::<f64>() / n as f64
}

/// `mean[−log D(c)] + mean[−log(1 − D(g))] + mean[−log(1 − D(e))]`.
///
/// Probabilities must lie in `[0, 1]`; the endpoints are accepted so the
/// limiting cases evaluate, and may produce an infinite loss.
pub fn discriminator_loss(comics: &[f64], generated: &[f64], edge_blurred: &[f64]) -> Result<f64> {
    check_probs("comics", comics, false)?;
    check_probs("generated", generated, false)?;
    check_probs("edge-blurred", edge_blurred, false)?;
    let real = mean(comics.iter().map(|p| -p.ln()), comics.len());
    let fake = mean(generated.iter().map(|p| -(-p).ln_1p()), generated.len());
    let edge = mean(edge_blurred.iter().map(|p| -(-p).ln_1p()), edge_blurred.len());
    Ok(real + fake + edge)
}

/// `mean[−log D(G(x))] + ω · mean|Φ(x) − Φ(G(x))|`.
pub fn generator_loss(
    generated: &[f64],
    feats_photo: ArrayViewD<f64>,
    feats_generated: ArrayViewD<f64>,
    omega: f64,
) -> Result<f64> {
    check_probs("generated", generated, true)?;
    if feats_photo.shape() != feats_generated.shape() {
        return Err(Error::Shape(format!(
            "content features {:?} vs {:?}",
            feats_photo.shape(),
            feats_generated.shape()
        )));
    }
    if feats_photo.is_empty() {
        return Err(Error::EmptyInput("content features".into()));
    }
    let adv = mean(generated.iter().map(|p| -p.ln()), generated.len());
    let l1 = mean(
        feats_photo.iter().zip(feats_generated.iter()).map(|(a, b)| (a - b).abs()),
        feats_photo.len(),
    );
    Ok(adv + omega * l1)
}

/// Logit form of [`discriminator_loss`]; each argument is a logit tensor.
pub fn discriminator_loss_logits<F: Float>(tape: &mut Tape<F>, comics: Var, generated: Var, edge: Var) -> Var {
    let neg = tape.scale(comics, F::c(-1.0));
    let real = tape.softplus(neg);
    let real = tape.mean(real);
    let fake = tape.softplus(generated);
    let fake = tape.mean(fake);
    let blur = tape.softplus(edge);
    let blur = tape.mean(blur);
    let s = tape.add(real, fake);
    tape.add(s, blur)
}

/// The content term alone: `mean|Φ(x) − Φ(G(x))|`.
pub fn content_l1<F: Float>(tape: &mut Tape<F>, feats_photo: Var, feats_generated: Var) -> Var {
    let d = tape.sub(feats_photo, feats_generated);
    let d = tape.abs(d);
    tape.mean(d)
}

/// Logit form of [`generator_loss`].
pub fn generator_loss_logits<F: Float>(
    tape: &mut Tape<F>,
    generated: Var,
    feats_photo: Var,
    feats_generated: Var,
    omega: f64,
) -> Var {
    let neg = tape.scale(generated, F::c(-1.0));
    let adv = tape.softplus(neg);
    let adv = tape.mean(adv);
    let con = content_l1(tape, feats_photo, feats_generated);
    let con = tape.scale(con, F::c(omega));
    tape.add(adv, con)
}
