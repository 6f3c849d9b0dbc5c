use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const SCORE_CLAMP: f64 = 1e-7;

fn check_label(y: f64) -> Result<()> {
    if y == 0.0 || y == 1.0 {
        Ok(())
    } else {
        Err(Error::contract(format!("label must be 0 or 1, got {y}")))
    }
}

/// Binary cross-entropy of one score against its label, with the score
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn wws_loss(score: f64, label: f64) -> Result<f64> {
    check_label(label)?;
    let p = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    Ok(-(label * p.ln() + (1.0 - label) * (1.0 - p).ln()))
}

/// Mean [`wws_loss`] over a batch of scores `[n, 1]` as a graph scalar.
pub fn bce_loss(g: &mut Graph, scores: Var, labels: &[f64]) -> Result<Var> {
    let s = g.shape(scores).to_vec();
    if s != [labels.len(), 1] {
        return Err(Error::shape(
            "bce_loss",
            format!("scores {s:?} vs {} labels", labels.len()),
        ));
    }
    for &y in labels {
        check_label(y)?;
    }
    let n = labels.len();
    let y = g.constant(Tensor::new(vec![n, 1], labels.to_vec())?)?;
    let not_y = g.constant(Tensor::new(
        vec![n, 1],
        labels.iter().map(|y| 1.0 - y).collect(),
    )?)?;
    let p = g.clamp(scores, SCORE_CLAMP, 1.0 - SCORE_CLAMP)?;
    let log_p = g.log(p)?;
    let q = g.affine(p, -1.0, 1.0)?;
    let log_q = g.log(q)?;
    let a = g.mul(y, log_p)?;
    let b = g.mul(not_y, log_q)?;
    let ll = g.add(a, b)?;
    let m = g.mean(ll)?;
    g.scale(m, -1.0)
}
