//! Adversarial objectives and gradient penalties as tape nodes.
//!
//! Batches are `[B, m]` nodes. Kernel arguments are paired by row: row `i`
//! of `z` with row `i` of the embedding.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::BoundKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ckipm,
    Mmd2,
    WganGp,
}

/// What the gradient penalty differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpTarget {
    /// The scalar witness `k(z, D(x))` (or the empirical MMD witness).
    Witness,
    /// Every output coordinate of `D`.
    JacobianFro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdEstimator {
    /// V-statistic over all kernel entries.
    Biased,
    /// U-statistic without the diagonal of the within-set terms.
    Unbiased,
}

fn batch_rows(tape: &Tape, v: Var) -> Result<usize> {
    match tape.shape(v) {
        [r, _] if *r > 0 => Ok(*r),
        s => Err(Error::Shape(format!("expected a non-empty [B, m] batch, got {s:?}"))),
    }
}

fn same_batch(tape: &Tape, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "batches must match, got {:?} and {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    batch_rows(tape, a).map(|_| ())
}

/// `mean_i [k(z_i, D(G(z_i))) - k(z_i, D(x_i))]`, without the penalty.
pub fn ckipm_discriminator_loss(
    tape: &mut Tape,
    kernel: &BoundKernel,
    z: Var,
    d_real: Var,
    d_fake: Var,
) -> Result<Var> {
    same_batch(tape, z, d_real)?;
    same_batch(tape, z, d_fake)?;
    let fake = kernel.eval(tape, z, d_fake)?;
    let real = kernel.eval(tape, z, d_real)?;
    let gap = tape.sub(fake, real)?;
    tape.mean(gap)
}

/// `-mean_i k(z_i, D(G(z_i)))`.
pub fn ckipm_generator_loss(tape: &mut Tape, kernel: &BoundKernel, z: Var, d_fake: Var) -> Result<Var> {
    same_batch(tape, z, d_fake)?;
    let k = kernel.eval(tape, z, d_fake)?;
    let m = tape.mean(k)?;
    tape.neg(m)
}

/// Squared MMD between the rows of `x` and the rows of `y`.
pub fn mmd2(tape: &mut Tape, kernel: &BoundKernel, x: Var, y: Var, estimator: MmdEstimator) -> Result<Var> {
    let n = batch_rows(tape, x)?;
    let p = batch_rows(tape, y)?;
    if tape.shape(x)[1] != tape.shape(y)[1] {
        return Err(Error::Shape(format!(
            "mmd2 point dimensions differ: {:?} vs {:?}",
            tape.shape(x),
            tape.shape(y)
        )));
    }
    let kxy = kernel.gram(tape, x, y)?;
    let cross = tape.mean(kxy)?;
    let cross = tape.scale(cross, -2.0)?;
    let within = |tape: &mut Tape, a: Var, count: usize| -> Result<Var> {
        let g = kernel.gram(tape, a, a)?;
        match estimator {
            MmdEstimator::Biased => tape.mean(g),
            MmdEstimator::Unbiased => {
                if count < 2 {
                    return Err(Error::InvalidParameter(
                        "unbiased mmd2 needs at least two points per set".into(),
                    ));
                }
                let total = tape.sum(g)?;
                let diag = kernel.eval(tape, a, a)?;
                let diag = tape.sum(diag)?;
                let off = tape.sub(total, diag)?;
                tape.scale(off, 1.0 / (count * (count - 1)) as f64)
            }
        }
    };
    let kxx = within(tape, x, n)?;
    let kyy = within(tape, y, p)?;
    let s = tape.add(kxx, kyy)?;
    tape.add(s, cross)
}

/// `mmd2` with the biased estimator.
pub fn mmd2_biased(tape: &mut Tape, kernel: &BoundKernel, x: Var, y: Var) -> Result<Var> {
    mmd2(tape, kernel, x, y, MmdEstimator::Biased)
}

/// `g + u * (x - g)` with one coefficient per row; `u` has shape `[B]`.
pub fn interpolate(tape: &mut Tape, x: Var, g: Var, u: Var) -> Result<Var> {
    same_batch(tape, x, g)?;
    let cols = tape.shape(x)[1];
    if tape.shape(u) != [tape.shape(x)[0]] {
        return Err(Error::Shape(format!(
            "interpolation coefficients must have shape [{}], got {:?}",
            tape.shape(x)[0],
            tape.shape(u)
        )));
    }
    let diff = tape.sub(x, g)?;
    let u = tape.broadcast_cols(u, cols)?;
    let step = tape.mul(u, diff)?;
    tape.add(g, step)
}

/// Mean over rows of the squared norm of `grad` (`[B, m]`).
fn mean_row_sq_norm(tape: &mut Tape, grad: Var) -> Result<Var> {
    let sq = tape.square(grad)?;
    let per_row = tape.sum_cols(sq)?;
    tape.mean(per_row)
}

/// Gradient of `sum_i f_i` with respect to the interpolates, as a node.
fn input_gradient(tape: &mut Tape, f: Var, x_hat: Var) -> Result<Var> {
    let total = tape.sum(f)?;
    Ok(tape.gradient_as_nodes(total, &[x_hat])?[0])
}

/// `mean_i ||∇ k(z_i, D(x̂_i))||²`, with `d_hat = D(x̂)` already on the tape.
pub fn witness_penalty(tape: &mut Tape, kernel: &BoundKernel, z: Var, x_hat: Var, d_hat: Var) -> Result<Var> {
    same_batch(tape, z, d_hat)?;
    let k = kernel.eval(tape, z, d_hat)?;
    let grad = input_gradient(tape, k, x_hat)?;
    mean_row_sq_norm(tape, grad)
}

/// Penalty on the empirical MMD witness
/// `f(v) = mean_j k(v, D(x_j)) - mean_j k(v, D(g_j))` at `v = D(x̂_i)`.
pub fn mmd_witness_penalty(
    tape: &mut Tape,
    kernel: &BoundKernel,
    x_hat: Var,
    d_hat: Var,
    d_real: Var,
    d_fake: Var,
) -> Result<Var> {
    let kr = kernel.gram(tape, d_hat, d_real)?;
    let kf = kernel.gram(tape, d_hat, d_fake)?;
    let (nr, nf) = (tape.shape(kr)[1] as f64, tape.shape(kf)[1] as f64);
    let sr = tape.sum_cols(kr)?;
    let sr = tape.scale(sr, 1.0 / nr)?;
    let sf = tape.sum_cols(kf)?;
    let sf = tape.scale(sf, 1.0 / nf)?;
    let f = tape.sub(sr, sf)?;
    let grad = input_gradient(tape, f, x_hat)?;
    mean_row_sq_norm(tape, grad)
}

/// `(1/B) sum_j ||∇ sum_i D(x̂)_ij||²`, the mean squared Frobenius norm of
/// the per-row Jacobians when rows do not interact.
pub fn jacobian_penalty(tape: &mut Tape, x_hat: Var, d_hat: Var) -> Result<Var> {
    let rows = batch_rows(tape, d_hat)?;
    let outs = tape.shape(d_hat)[1];
    let mut acc: Option<Var> = None;
    for j in 0..outs {
        let col = tape.column(d_hat, j)?;
        let grad = input_gradient(tape, col, x_hat)?;
        let sq = tape.square(grad)?;
        let s = tape.sum(sq)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let total = acc.ok_or_else(|| Error::Shape("discriminator has no outputs".into()))?;
    tape.scale(total, 1.0 / rows as f64)
}

/// `mean_i (||∇ D(x̂_i)|| - 1)²` for a scalar critic `d_hat` of shape `[B, 1]`.
pub fn wgan_penalty(tape: &mut Tape, x_hat: Var, d_hat: Var) -> Result<Var> {
    if tape.shape(d_hat).get(1) != Some(&1) {
        return Err(Error::Shape(format!(
            "WGAN-GP needs a [B, 1] critic output, got {:?}",
            tape.shape(d_hat)
        )));
    }
    let grad = input_gradient(tape, d_hat, x_hat)?;
    let sq = tape.square(grad)?;
    let per_row = tape.sum_cols(sq)?;
    let norm = tape.smooth_sqrt(per_row)?;
    let gap = tape.shift(norm, -1.0)?;
    let gap = tape.square(gap)?;
    tape.mean(gap)
}

/// `mean D(G(z)) - mean D(x)`, without the penalty.
pub fn wgan_discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let f = tape.mean(d_fake)?;
    let r = tape.mean(d_real)?;
    tape.sub(f, r)
}

/// `-mean D(G(z))`.
pub fn wgan_generator_loss(tape: &mut Tape, d_fake: Var) -> Result<Var> {
    let f = tape.mean(d_fake)?;
    tape.neg(f)
}
