use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::AutodiffError;

/// Floor applied inside every logarithm taken by the losses.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_index(op: &'static str, tape: &Tape, v: Var, index: usize) -> Result<(), AutodiffError> {
    let n = tape.value(v).last_dim();
    if index >= n {
        return Err(AutodiffError::Shape { op, detail: format!("index {index} out of range for {:?}", tape.value(v).shape()) });
    }
    Ok(())
}

/// `-advantage * log_probs[action]`. The advantage is a plain number, so no
/// gradient flows into the value estimate through this term.
pub fn policy_gradient_term(tape: &mut Tape, log_probs: Var, action: usize, advantage: f64) -> Result<Var, AutodiffError> {
    check_index("policy_gradient_term", tape, log_probs, action)?;
    let lp = tape.slice(log_probs, action, 1)?;
    if tape.value(lp).item() <= LOG_FLOOR.ln() {
        log::warn!("chosen action {action} has probability below the log floor; log clamped");
    }
    let lp = tape.sum(lp)?;
    tape.scale(lp, -advantage)
}

/// `(target - value)^2`.
pub fn value_mse(tape: &mut Tape, value: Var, target: f64) -> Result<Var, AutodiffError> {
    let v = tape.sum(value)?;
    let r = tape.constant(Tensor::scalar(target));
    let d = tape.sub(r, v)?;
    tape.mul(d, d)
}

/// `-sum p log p` over a single distribution.
pub fn entropy(tape: &mut Tape, probs: Var, log_probs: Var) -> Result<Var, AutodiffError> {
    let plp = tape.mul(probs, log_probs)?;
    let s = tape.sum(plp)?;
    tape.scale(s, -1.0)
}

/// Mean cross-entropy over `groups = classes.len()` independent
/// `buckets`-way classifications packed into one row of logits.
pub fn depth_ce(tape: &mut Tape, logits: Var, classes: &[usize], buckets: usize) -> Result<Var, AutodiffError> {
    let groups = classes.len();
    if groups == 0 || buckets == 0 || tape.value(logits).len() != groups * buckets || classes.iter().any(|&c| c >= buckets) {
        return Err(AutodiffError::Shape {
            op: "depth_ce",
            detail: format!("{:?} logits for {groups} groups of {buckets} with classes {classes:?}", tape.value(logits).shape()),
        });
    }
    let mut onehot = vec![0.0; groups * buckets];
    for (g, &c) in classes.iter().enumerate() {
        onehot[g * buckets + c] = 1.0;
    }
    let z = tape.reshape(logits, &[groups, buckets])?;
    let p = tape.softmax(z)?;
    let lp = tape.log(p, LOG_FLOOR)?;
    let y = tape.constant(Tensor::new(vec![groups, buckets], onehot)?);
    let picked = tape.mul(lp, y)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0 / groups as f64)
}

/// Binary cross-entropy of a single logit against `label`.
pub fn loop_ce(tape: &mut Tape, logit: Var, label: bool) -> Result<Var, AutodiffError> {
    if tape.value(logit).len() != 1 {
        return Err(AutodiffError::Shape { op: "loop_ce", detail: format!("{:?}", tape.value(logit).shape()) });
    }
    // 1 - sigmoid(x) == sigmoid(-x), which keeps both branches well conditioned.
    let z = if label { logit } else { tape.scale(logit, -1.0)? };
    let p = tape.sigmoid(z)?;
    let lp = tape.log(p, LOG_FLOOR)?;
    let s = tape.sum(lp)?;
    tape.scale(s, -1.0)
}
