//! Gated recurrent unit steps recorded on a tape.

use crate::numerics::{Scalar, Tape, TensorError, ValueId};

/// Tape ids of one GRU direction's parameters.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BoundGru {
    pub w_ir: ValueId,
    pub w_iz: ValueId,
    pub w_in: ValueId,
    pub w_hr: ValueId,
    pub w_hz: ValueId,
    pub w_hn: ValueId,
    pub b_ir: ValueId,
    pub b_iz: ValueId,
    pub b_in: ValueId,
    pub b_hr: ValueId,
    pub b_hz: ValueId,
    pub b_hn: ValueId,
}

fn gate<T: Scalar>(
    tape: &mut Tape<T>,
    x: ValueId,
    h_prev: ValueId,
    w_i: ValueId,
    b_i: ValueId,
    w_h: ValueId,
    b_h: ValueId,
) -> Result<ValueId, TensorError> {
    let xi = tape.vec_mat(x, w_i)?;
    let xi = tape.add(xi, b_i)?;
    let hh = tape.vec_mat(h_prev, w_h)?;
    let hh = tape.add(hh, b_h)?;
    tape.add(xi, hh)
}

/// One step: reset and update gates through the logistic function, the
/// candidate state through tanh, then the convex combination
/// h = (1−z)⊙n + z⊙h_prev.
///
/// With `literal_eq3` the candidate reuses the update gate's
/// pre-activation (the formula as printed, reset gate unused); otherwise
/// the candidate is the standard n = tanh(Wx + b + r⊙(Uh + c)).
pub(crate) fn gru_step<T: Scalar>(
    tape: &mut Tape<T>,
    g: &BoundGru,
    x: ValueId,
    h_prev: ValueId,
    literal_eq3: bool,
) -> Result<ValueId, TensorError> {
    let r_pre = gate(tape, x, h_prev, g.w_ir, g.b_ir, g.w_hr, g.b_hr)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = gate(tape, x, h_prev, g.w_iz, g.b_iz, g.w_hz, g.b_hz)?;
    let z = tape.sigmoid(z_pre);

    let n = if literal_eq3 {
        let _ = r;
        let pre = gate(tape, x, h_prev, g.w_iz, g.b_iz, g.w_hz, g.b_hz)?;
        tape.tanh(pre)
    } else {
        let xi = tape.vec_mat(x, g.w_in)?;
        let xi = tape.add(xi, g.b_in)?;
        let hh = tape.vec_mat(h_prev, g.w_hn)?;
        let hh = tape.add(hh, g.b_hn)?;
        let gated = tape.mul(r, hh)?;
        let pre = tape.add(xi, gated)?;
        tape.tanh(pre)
    };

    // (1−z)⊙n + z⊙h_prev, written without a ones constant.
    let zn = tape.mul(z, n)?;
    let zh = tape.mul(z, h_prev)?;
    let partial = tape.sub(n, zn)?;
    tape.add(partial, zh)
}

/// Runs both directions over the true token positions and returns one
/// encoder row (forward state ‖ backward state) per position.
pub(crate) fn bigru_encode<T: Scalar>(
    tape: &mut Tape<T>,
    fwd: &BoundGru,
    bwd: &BoundGru,
    xs: &[ValueId],
    hidden: usize,
    literal_eq3: bool,
) -> Result<Vec<ValueId>, TensorError> {
    let n = xs.len();
    let h0 = tape.input(crate::numerics::Tensor::zeros(&[hidden]));

    let mut forward = Vec::with_capacity(n);
    let mut h = h0;
    for &x in xs {
        h = gru_step(tape, fwd, x, h, literal_eq3)?;
        forward.push(h);
    }

    let mut backward = vec![h0; n];
    let mut h = h0;
    for (t, &x) in xs.iter().enumerate().rev() {
        h = gru_step(tape, bwd, x, h, literal_eq3)?;
        backward[t] = h;
    }

    (0..n)
        .map(|t| tape.concat(&[forward[t], backward[t]]))
        .collect()
}
