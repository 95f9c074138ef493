use super::tape::{Tape, Var};
use super::AutodiffError;

/// Weights of one LSTM layer with gates packed in the order input, forget,
/// cell, output.
///
/// `w` has shape `[in + hidden, 4 * hidden]` and multiplies `[x, h]`;
/// `b` has `4 * hidden` entries.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

/// One LSTM step. `x` is `[1, in]`; `h` and `c` are `[1, hidden]`.
/// Returns the new `(h, c)`.
pub fn lstm_cell(tape: &mut Tape, x: Var, h: Var, c: Var, weights: &LstmWeights) -> Result<(Var, Var), AutodiffError> {
    let hidden = tape.value(h).last_dim();
    if tape.value(c).last_dim() != hidden || tape.value(weights.w).last_dim() != 4 * hidden {
        return Err(AutodiffError::Shape {
            op: "lstm_cell",
            detail: format!(
                "h {:?}, c {:?}, w {:?}",
                tape.value(h).shape(),
                tape.value(c).shape(),
                tape.value(weights.w).shape()
            ),
        });
    }
    let xh = tape.concat(&[x, h])?;
    let z = tape.matmul(xh, weights.w)?;
    let z = tape.bias_add(z, weights.b)?;
    let i = tape.slice(z, 0, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice(z, hidden, hidden)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice(z, 2 * hidden, hidden)?;
    let g = tape.tanh(g)?;
    let o = tape.slice(z, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}
