//! Differentiable primitives with explicit forward and backward passes.
//!
//! Every backward takes the forward inputs plus the gradient of the loss with
//! respect to the forward output and returns an [`OpGrad`] whose
//! `input_grads` follow the forward argument order.

use crate::error::{Error, Result};
use crate::tensor::{OpGrad, Tensor};

/// Padding mode for [`conv1d_forward`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding so that the output keeps the input length. Even widths
    /// put the extra zero on the right.
    Same,
    Valid,
}

/// Row-major `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`.
/// `a_t`/`b_t` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every operand to its m/k/n extents and the
    // strides are derived from those extents, so all accesses stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn expect_rank(op: &'static str, name: &str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("{name} must have rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn expect_shape(op: &'static str, name: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::shape(
            op,
            format!("{name} must have shape {shape:?}, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// affine

fn check_affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    const OP: &str = "affine";
    expect_rank(OP, "x", x, 2)?;
    expect_rank(OP, "w", w, 2)?;
    let (batch, inp, out) = (x.dim(0), x.dim(1), w.dim(1));
    if w.dim(0) != inp {
        return Err(Error::shape(
            OP,
            format!("inner extents disagree: x {:?}, w {:?}", x.shape(), w.shape()),
        ));
    }
    expect_shape(OP, "b", b, &[out])?;
    Ok((batch, inp, out))
}

/// `y[i,j] = Σ_k x[i,k]·w[k,j] + b[j]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, inp, out) = check_affine(x, w, b)?;
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(b.data());
    }
    gemm(batch, inp, out, x.data(), false, w.data(), false, 1.0, &mut y);
    let y = Tensor::new(vec![batch, out], y)?;
    y.ensure_finite("affine_forward")?;
    Ok(y)
}

pub fn affine_backward(x: &Tensor, w: &Tensor, b: &Tensor, output_grad: &Tensor) -> Result<OpGrad> {
    let (batch, inp, out) = check_affine(x, w, b)?;
    expect_shape("affine_backward", "output_grad", output_grad, &[batch, out])?;
    let dy = output_grad.data();

    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, dy, false, w.data(), true, 0.0, &mut dx);
    let mut dw = vec![0.0; inp * out];
    gemm(inp, batch, out, x.data(), true, dy, false, 0.0, &mut dw);
    let mut db = vec![0.0; out];
    for row in dy.chunks_exact(out) {
        for (acc, g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![
            Tensor::new(vec![batch, inp], dx)?,
            Tensor::new(vec![inp, out], dw)?,
            Tensor::new(vec![out], db)?,
        ],
    })
}

// ---------------------------------------------------------------------------
// conv1d

struct ConvDims {
    batch: usize,
    ch_in: usize,
    time: usize,
    ch_out: usize,
    width: usize,
    pad_left: usize,
    time_out: usize,
}

fn check_conv(x: &Tensor, kernels: &Tensor, bias: &Tensor, padding: Padding) -> Result<ConvDims> {
    const OP: &str = "conv1d";
    expect_rank(OP, "x", x, 3)?;
    expect_rank(OP, "kernels", kernels, 3)?;
    let (batch, ch_in, time) = (x.dim(0), x.dim(1), x.dim(2));
    let (ch_out, k_in, width) = (kernels.dim(0), kernels.dim(1), kernels.dim(2));
    if k_in != ch_in {
        return Err(Error::shape(
            OP,
            format!("kernels expect {k_in} input channels, x has {ch_in}"),
        ));
    }
    expect_shape(OP, "bias", bias, &[ch_out])?;
    let (pad_left, time_out) = match padding {
        Padding::Same => ((width - 1) / 2, time),
        Padding::Valid => {
            if width > time {
                return Err(Error::shape(
                    OP,
                    format!("kernel width {width} exceeds time extent {time} under valid padding"),
                ));
            }
            (0, time - width + 1)
        }
    };
    Ok(ConvDims {
        batch,
        ch_in,
        time,
        ch_out,
        width,
        pad_left,
        time_out,
    })
}

/// Unfolds one batch element `[ch_in, time]` into `[ch_in·width, time_out]`.
fn im2col(xb: &[f64], d: &ConvDims, col: &mut [f64]) {
    let (t_out, pl) = (d.time_out, d.pad_left as isize);
    for c in 0..d.ch_in {
        let src_row = &xb[c * d.time..(c + 1) * d.time];
        for w in 0..d.width {
            let dst = &mut col[(c * d.width + w) * t_out..(c * d.width + w + 1) * t_out];
            let shift = w as isize - pl;
            for (t, v) in dst.iter_mut().enumerate() {
                let s = t as isize + shift;
                *v = if s >= 0 && (s as usize) < d.time {
                    src_row[s as usize]
                } else {
                    0.0
                };
            }
        }
    }
}

fn col2im_add(dcol: &[f64], d: &ConvDims, dxb: &mut [f64]) {
    let (t_out, pl) = (d.time_out, d.pad_left as isize);
    for c in 0..d.ch_in {
        let dst_row = &mut dxb[c * d.time..(c + 1) * d.time];
        for w in 0..d.width {
            let src = &dcol[(c * d.width + w) * t_out..(c * d.width + w + 1) * t_out];
            let shift = w as isize - pl;
            for (t, g) in src.iter().enumerate() {
                let s = t as isize + shift;
                if s >= 0 && (s as usize) < d.time {
                    dst_row[s as usize] += g;
                }
            }
        }
    }
}

/// Multi-channel 1D cross-correlation: `x[batch, ch_in, time]` with
/// `kernels[ch_out, ch_in, width]` and `bias[ch_out]`.
pub fn conv1d_forward(x: &Tensor, kernels: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let d = check_conv(x, kernels, bias, padding)?;
    let cw = d.ch_in * d.width;
    let in_stride = d.ch_in * d.time;
    let out_stride = d.ch_out * d.time_out;
    let mut col = vec![0.0; cw * d.time_out];
    let mut out = vec![0.0; d.batch * out_stride];
    for b in 0..d.batch {
        im2col(&x.data()[b * in_stride..(b + 1) * in_stride], &d, &mut col);
        let ob = &mut out[b * out_stride..(b + 1) * out_stride];
        for (o, row) in ob.chunks_exact_mut(d.time_out).enumerate() {
            row.iter_mut().for_each(|v| *v = bias.data()[o]);
        }
        gemm(d.ch_out, cw, d.time_out, kernels.data(), false, &col, false, 1.0, ob);
    }
    let y = Tensor::new(vec![d.batch, d.ch_out, d.time_out], out)?;
    y.ensure_finite("conv1d_forward")?;
    Ok(y)
}

/// Gradients for `[x, kernels, bias]`.
pub fn conv1d_backward(
    x: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
    output_grad: &Tensor,
) -> Result<OpGrad> {
    let d = check_conv(x, kernels, bias, padding)?;
    expect_shape(
        "conv1d_backward",
        "output_grad",
        output_grad,
        &[d.batch, d.ch_out, d.time_out],
    )?;
    let cw = d.ch_in * d.width;
    let in_stride = d.ch_in * d.time;
    let out_stride = d.ch_out * d.time_out;

    let mut col = vec![0.0; cw * d.time_out];
    let mut dcol = vec![0.0; cw * d.time_out];
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; kernels.len()];
    let mut db = vec![0.0; d.ch_out];
    for b in 0..d.batch {
        let gb = &output_grad.data()[b * out_stride..(b + 1) * out_stride];
        im2col(&x.data()[b * in_stride..(b + 1) * in_stride], &d, &mut col);
        gemm(d.ch_out, d.time_out, cw, gb, false, &col, true, 1.0, &mut dk);
        gemm(cw, d.ch_out, d.time_out, kernels.data(), true, gb, false, 0.0, &mut dcol);
        col2im_add(&dcol, &d, &mut dx[b * in_stride..(b + 1) * in_stride]);
        for (o, row) in gb.chunks_exact(d.time_out).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![
            Tensor::new(x.shape().to_vec(), dx)?,
            Tensor::new(kernels.shape().to_vec(), dk)?,
            Tensor::new(vec![d.ch_out], db)?,
        ],
    })
}

// ---------------------------------------------------------------------------
// relu

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

pub fn relu_backward(x: &Tensor, output_grad: &Tensor) -> Result<OpGrad> {
    expect_shape("relu_backward", "output_grad", output_grad, x.shape())?;
    let dx = x
        .data()
        .iter()
        .zip(output_grad.data())
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect();
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![Tensor::new(x.shape().to_vec(), dx)?],
    })
}

// ---------------------------------------------------------------------------
// global average pooling

/// Mean over the time axis: `[batch, ch, time] -> [batch, ch]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    expect_rank("global_avg_pool", "x", x, 3)?;
    let (batch, ch, time) = (x.dim(0), x.dim(1), x.dim(2));
    let inv = 1.0 / time as f64;
    let out = x
        .data()
        .chunks_exact(time)
        .map(|row| row.iter().sum::<f64>() * inv)
        .collect();
    Tensor::new(vec![batch, ch], out)
}

pub fn gap_backward(x: &Tensor, output_grad: &Tensor) -> Result<OpGrad> {
    expect_rank("gap_backward", "x", x, 3)?;
    let (batch, ch, time) = (x.dim(0), x.dim(1), x.dim(2));
    expect_shape("gap_backward", "output_grad", output_grad, &[batch, ch])?;
    let inv = 1.0 / time as f64;
    let mut dx = Vec::with_capacity(x.len());
    for &g in output_grad.data() {
        dx.extend(std::iter::repeat_n(g * inv, time));
    }
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![Tensor::new(x.shape().to_vec(), dx)?],
    })
}

// ---------------------------------------------------------------------------
// log-softmax

/// Row-wise `x - max - log Σ exp(x - max)`.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    expect_rank("log_softmax", "x", x, 2)?;
    x.ensure_finite("log_softmax input")?;
    let classes = x.dim(1);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - max - lse));
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn log_softmax_backward(x: &Tensor, output_grad: &Tensor) -> Result<OpGrad> {
    let y = log_softmax(x)?;
    expect_shape("log_softmax_backward", "output_grad", output_grad, x.shape())?;
    let classes = x.dim(1);
    let mut dx = Vec::with_capacity(x.len());
    for (yr, gr) in y.data().chunks_exact(classes).zip(output_grad.data().chunks_exact(classes)) {
        let total: f64 = gr.iter().sum();
        dx.extend(yr.iter().zip(gr).map(|(yi, gi)| gi - yi.exp() * total));
    }
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![Tensor::new(x.shape().to_vec(), dx)?],
    })
}

// ---------------------------------------------------------------------------
// batch normalization (over batch and time, per channel)

pub const BATCH_NORM_EPS: f64 = 1e-3;

/// Training-mode batch norm on `[batch, ch, time]`. Returns the output and the
/// per-channel batch mean and (biased) variance.
pub fn batch_norm_forward(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    expect_rank("batch_norm", "x", x, 3)?;
    let (batch, ch, time) = (x.dim(0), x.dim(1), x.dim(2));
    expect_shape("batch_norm", "gamma", gamma, &[ch])?;
    expect_shape("batch_norm", "beta", beta, &[ch])?;
    let n = (batch * time) as f64;
    let mut mean = vec![0.0; ch];
    let mut var = vec![0.0; ch];
    for b in 0..batch {
        for c in 0..ch {
            let row = &x.data()[(b * ch + c) * time..(b * ch + c + 1) * time];
            mean[c] += row.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for b in 0..batch {
        for c in 0..ch {
            let row = &x.data()[(b * ch + c) * time..(b * ch + c + 1) * time];
            var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    let y = batch_norm_apply(x, gamma, beta, &mean, &var)?;
    Ok((y, mean, var))
}

/// Inference-mode batch norm with fixed statistics.
pub fn batch_norm_apply(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64]) -> Result<Tensor> {
    expect_rank("batch_norm", "x", x, 3)?;
    let (ch, time) = (x.dim(1), x.dim(2));
    expect_shape("batch_norm", "gamma", gamma, &[ch])?;
    let mut out = x.clone();
    for (i, row) in out.data_mut().chunks_exact_mut(time).enumerate() {
        let c = i % ch;
        let scale = gamma.data()[c] / (var[c] + BATCH_NORM_EPS).sqrt();
        let shift = beta.data()[c] - mean[c] * scale;
        row.iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(out)
}

/// Gradients for `[x, gamma, beta]` of training-mode batch norm.
pub fn batch_norm_backward(x: &Tensor, gamma: &Tensor, beta: &Tensor, output_grad: &Tensor) -> Result<OpGrad> {
    let (_, mean, var) = batch_norm_forward(x, gamma, beta)?;
    expect_shape("batch_norm_backward", "output_grad", output_grad, x.shape())?;
    let (batch, ch, time) = (x.dim(0), x.dim(1), x.dim(2));
    let n = (batch * time) as f64;
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for (i, (xr, gr)) in x
        .data()
        .chunks_exact(time)
        .zip(output_grad.data().chunks_exact(time))
        .enumerate()
    {
        let c = i % ch;
        for (xv, g) in xr.iter().zip(gr) {
            let xhat = (xv - mean[c]) * inv_std[c];
            dgamma[c] += g * xhat;
            dbeta[c] += g;
        }
    }
    let mut dx = vec![0.0; x.len()];
    for (i, ((xr, gr), dr)) in x
        .data()
        .chunks_exact(time)
        .zip(output_grad.data().chunks_exact(time))
        .zip(dx.chunks_exact_mut(time))
        .enumerate()
    {
        let c = i % ch;
        let g = gamma.data()[c];
        for ((xv, gv), dv) in xr.iter().zip(gr).zip(dr.iter_mut()) {
            let xhat = (xv - mean[c]) * inv_std[c];
            *dv = g * inv_std[c] / n * (n * gv - dbeta[c] - xhat * dgamma[c]);
        }
    }
    Ok(OpGrad {
        output_grad: output_grad.clone(),
        input_grads: vec![
            Tensor::new(x.shape().to_vec(), dx)?,
            Tensor::new(vec![ch], dgamma)?,
            Tensor::new(vec![ch], dbeta)?,
        ],
    })
}

// ---------------------------------------------------------------------------
// cosine similarity

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `aᵀb / (‖a‖‖b‖)`. Zero-norm inputs are an error.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "cosine_similarity",
            format!("lengths {} and {}", a.len(), b.len()),
        ));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity together with its gradients with respect to `a` and `b`.
pub fn cosine_similarity_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let sim = cosine_similarity(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    let da = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| bi / (na * nb) - sim * ai / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(ai, bi)| ai / (na * nb) - sim * bi / (nb * nb))
        .collect();
    Ok((sim, da, db))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn affine_examples() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = affine_forward(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
        let y = affine_forward(&x, &eye, &t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0]);

        // direct dot products: [1+2, 3+4]
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = affine_forward(&x, &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let w = t(&[2, 2], &[1.0; 4]);
        assert!(matches!(
            affine_forward(&x, &w, &t(&[2], &[0.0; 2])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn conv_examples() {
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let zero = t(&[1], &[0.0]);
        let y = conv1d_forward(&x, &t(&[1, 1, 1], &[2.0]), &zero, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0]);

        // sliding-window sums of adjacent pairs
        let k = t(&[1, 1, 2], &[1.0, 1.0]);
        let y = conv1d_forward(&x, &k, &zero, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0]);

        // padded sliding window: [1+2, 2+3, 3+0]
        let y = conv1d_forward(&x, &k, &zero, Padding::Same).unwrap();
        assert_eq!(y.data(), &[3.0, 5.0, 3.0]);
    }

    #[test]
    fn conv_even_width_pads_right() {
        // An asymmetric kernel exposes where the zero goes: output[t] = x[t] (+ 10·x[t+1]).
        let x = t(&[1, 1, 3], &[1.0, 2.0, 3.0]);
        let k = t(&[1, 1, 2], &[1.0, 10.0]);
        let y = conv1d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Same).unwrap();
        assert_eq!(y.data(), &[21.0, 32.0, 3.0]);
    }

    #[test]
    fn conv_valid_width_exceeds_time() {
        let x = t(&[1, 1, 2], &[1.0, 2.0]);
        let k = t(&[1, 1, 3], &[1.0; 3]);
        let err = conv1d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Valid);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = t(&[1, 2, 3], &[0.0; 6]);
        let k = t(&[1, 1, 1], &[1.0]);
        assert!(conv1d_forward(&x, &k, &t(&[1], &[0.0]), Padding::Same).is_err());
    }

    #[test]
    fn relu_examples() {
        let y = relu_forward(&t(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&t(&[2], &[-3.0, -0.5])).data(), &[0.0, 0.0]);
        assert_eq!(relu_forward(&t(&[2], &[3.0, 0.5])).data(), &[3.0, 0.5]);
        let g = relu_backward(&t(&[2], &[-1.0, 2.0]), &t(&[2], &[1.0, 1.0])).unwrap();
        assert_eq!(g.input_grads[0].data(), &[0.0, 1.0]);
    }

    #[test]
    fn gap_examples() {
        let x = t(&[1, 2, 2], &[1.0, 3.0, 2.0, 4.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.0, 3.0]);

        let x1 = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(global_avg_pool(&x1).unwrap().data(), x1.data());

        let short = t(&[1, 1, 2], &[1.0, 5.0]);
        let dup = t(&[1, 1, 4], &[1.0, 1.0, 5.0, 5.0]);
        assert_eq!(
            global_avg_pool(&short).unwrap().data(),
            global_avg_pool(&dup).unwrap().data()
        );

        let g = gap_backward(&t(&[1, 1, 2], &[7.0, 9.0]), &t(&[1, 1], &[1.0])).unwrap();
        assert_eq!(g.input_grads[0].data(), &[0.5, 0.5]);
    }

    #[test]
    fn log_softmax_examples() {
        let y = log_softmax(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((y.data()[0] + ln2).abs() < 1e-15 && (y.data()[1] + ln2).abs() < 1e-15);

        let y = log_softmax(&t(&[1, 2], &[1000.0, 0.0])).unwrap();
        assert!(y.data()[0].abs() < 1e-12);
        assert!((y.data()[1] + 1000.0).abs() < 1e-9);

        // direct evaluation: log(e^i / (e + e^2 + e^3))
        let y = log_softmax(&t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, v) in y.data().iter().enumerate() {
            let expect = ((i + 1) as f64).exp() / denom;
            assert!((v - expect.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        assert!(matches!(
            log_softmax(&t(&[1, 2], &[f64::NAN, 0.0])),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -2.0, 5.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn batch_norm_normalizes_per_channel() {
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, mean, var) = batch_norm_forward(&x, &t(&[1], &[1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(mean, vec![2.5]);
        assert_eq!(var, vec![1.25]);
        let s: f64 = y.data().iter().sum();
        assert!(s.abs() < 1e-12);
    }
}
