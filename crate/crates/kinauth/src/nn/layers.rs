//! Layer forward/backward kernels.
//!
//! Conventions:
//! - Sequence tensors are `[batch, length, channels]`, row-major.
//! - Vector tensors are `[batch, features]`.
//! - Convolution is cross-correlation with same padding and stride 1:
//!   `y[b,i,o] = bias[o] + Σ_{k,c} w[k,c,o] · x[b, i+k−P, c]` with zero
//!   padding of `P = (kernel−1)/2` on each side (kernel must be odd).
//! - Batch norm normalizes the trailing (feature/channel) axis over all
//!   leading positions: `batch` rows for `[B,F]` inputs, `batch × length`
//!   rows for `[B,L,C]` inputs. Batch statistics use the population
//!   (biased) variance.
//! - Max pooling is non-overlapping with stride = pool; a trailing remainder
//!   shorter than `pool` is dropped. Gradient routes to the argmax, first
//!   occurrence winning ties.
//!
//! Backward passes are hand-derived; the test suite checks every one of them
//! against central finite differences in `f64`.

use super::{NnError, Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Activation applied inside a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

// ── 1-D convolution ─────────────────────────────────────────────────────────

fn conv_check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize), NnError> {
    if x.rank() != 3 || w.rank() != 3 || b.rank() != 1 {
        return Err(NnError::ShapeError(format!(
            "conv1d expects x [B,L,Cin], w [K,Cin,Cout], b [Cout]; got {:?}, {:?}, {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (bs, l, cin) = (x.dim(0), x.dim(1), x.dim(2));
    let (k, wcin, cout) = (w.dim(0), w.dim(1), w.dim(2));
    if wcin != cin || b.dim(0) != cout {
        return Err(NnError::ShapeError(format!(
            "conv1d channel mismatch: x has {} input channels, w expects {}, bias has {} of {} output channels",
            cin,
            wcin,
            b.dim(0),
            cout
        )));
    }
    if k % 2 == 0 || k == 0 {
        return Err(NnError::ShapeError(format!("conv1d kernel must be odd, got {k}")));
    }
    Ok((bs, l, cin, cout, k))
}

/// Same-padding stride-1 cross-correlation: `[B,L,Cin] → [B,L,Cout]`.
pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (bs, l, cin, cout, k) = conv_check(x, w, b)?;
    let p = (k - 1) / 2;
    let mut y = Tensor::zeros(&[bs, l, cout]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let yd = y.data_mut();
    for bi in 0..bs {
        let xb = &xd[bi * l * cin..][..l * cin];
        let yb = &mut yd[bi * l * cout..][..l * cout];
        for i in 0..l {
            let yr = &mut yb[i * cout..][..cout];
            yr.copy_from_slice(bd);
            for kk in 0..k {
                // input position j−P for tap kk; skip taps that land in padding
                let j = i + kk;
                if j < p || j - p >= l {
                    continue;
                }
                let xr = &xb[(j - p) * cin..][..cin];
                let wk = &wd[kk * cin * cout..][..cin * cout];
                for c in 0..cin {
                    let xv = xr[c];
                    let wr = &wk[c * cout..][..cout];
                    for o in 0..cout {
                        yr[o] += xv * wr[o];
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv1d_forward`]. `l2` adds the `2·l2·w` penalty term to
/// `grad_w` (the corresponding loss term is `l2·Σw²`).
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_y: &Tensor<T>,
    l2: T,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (bs, l, cin, cout, k) = {
        let b = Tensor::zeros(&[w.dim(2)]);
        conv_check(x, w, &b)?
    };
    if grad_y.shape() != [bs, l, cout] {
        return Err(NnError::ShapeError(format!(
            "conv1d_backward grad shape {:?}, expected {:?}",
            grad_y.shape(),
            [bs, l, cout]
        )));
    }
    let p = (k - 1) / 2;
    let mut gx = Tensor::zeros(&[bs, l, cin]);
    let mut gw = Tensor::zeros(&[k, cin, cout]);
    let mut gb = Tensor::zeros(&[cout]);
    let xd = x.data();
    let wd = w.data();
    let gyd = grad_y.data();
    {
        let gxd = gx.data_mut();
        // borrow gw/gb separately; split scopes keep the borrow checker happy
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for bi in 0..bs {
            let xb = &xd[bi * l * cin..][..l * cin];
            let gyb = &gyd[bi * l * cout..][..l * cout];
            let gxb = &mut gxd[bi * l * cin..][..l * cin];
            for i in 0..l {
                let gyr = &gyb[i * cout..][..cout];
                for o in 0..cout {
                    gbd[o] += gyr[o];
                }
                for kk in 0..k {
                    let j = i + kk;
                    if j < p || j - p >= l {
                        continue;
                    }
                    let xr = &xb[(j - p) * cin..][..cin];
                    let gxr = &mut gxb[(j - p) * cin..][..cin];
                    let wk = &wd[kk * cin * cout..][..cin * cout];
                    let gwk = &mut gwd[kk * cin * cout..][..cin * cout];
                    for c in 0..cin {
                        let wr = &wk[c * cout..][..cout];
                        let gwr = &mut gwk[c * cout..][..cout];
                        let xv = xr[c];
                        let mut acc = T::zero();
                        for o in 0..cout {
                            acc += gyr[o] * wr[o];
                            gwr[o] += xv * gyr[o];
                        }
                        gxr[c] += acc;
                    }
                }
            }
        }
    }
    if l2 > T::zero() {
        let two = T::from_f(2.0);
        for (g, v) in gw.data_mut().iter_mut().zip(wd) {
            *g += two * l2 * *v;
        }
    }
    Ok((gx, gw, gb))
}

// ── batch normalization ─────────────────────────────────────────────────────

/// Values cached by the train-mode forward pass for backward.
pub struct BnCache<T> {
    /// Normalized input, same shape as x.
    pub xhat: Tensor<T>,
    /// Per-feature 1/sqrt(var + eps).
    pub inv_std: Vec<T>,
    /// Per-feature batch mean (for the running-stat update).
    pub mean: Vec<T>,
    /// Per-feature batch population variance (for the running-stat update).
    pub var: Vec<T>,
}

fn bn_rows_features<T: Scalar>(x: &Tensor<T>) -> (usize, usize) {
    let f = *x.shape().last().expect("non-scalar tensor");
    (x.len() / f, f)
}

/// Train-mode batch norm over the trailing axis. Statistics are accumulated
/// in `f64` regardless of `T` so results do not depend on summation order
/// tricks. Errors with [`NnError::DegenerateBatch`] if the leading batch
/// dimension is smaller than 2.
pub fn batchnorm_forward_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnCache<T>), NnError> {
    let (rows, f) = bn_rows_features(x);
    if x.dim(0) < 2 {
        return Err(NnError::DegenerateBatch(x.dim(0)));
    }
    if gamma.len() != f || beta.len() != f {
        return Err(NnError::ShapeError(format!(
            "batchnorm has {f} features but gamma/beta have {}/{}",
            gamma.len(),
            beta.len()
        )));
    }
    let xd = x.data();
    let mut mean64 = vec![0f64; f];
    let mut var64 = vec![0f64; f];
    for r in 0..rows {
        for (c, m) in mean64.iter_mut().enumerate() {
            *m += xd[r * f + c].to_f64().unwrap();
        }
    }
    let n = rows as f64;
    for m in &mut mean64 {
        *m /= n;
    }
    for r in 0..rows {
        for (c, v) in var64.iter_mut().enumerate() {
            let d = xd[r * f + c].to_f64().unwrap() - mean64[c];
            *v += d * d;
        }
    }
    for v in &mut var64 {
        *v /= n; // population variance
    }
    let mean: Vec<T> = mean64.iter().map(|&m| T::from_f(m)).collect();
    let var: Vec<T> = var64.iter().map(|&v| T::from_f(v)).collect();
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    {
        let xh = xhat.data_mut();
        let yd = y.data_mut();
        let gd = gamma.data();
        let bd = beta.data();
        for r in 0..rows {
            for c in 0..f {
                let i = r * f + c;
                let h = (xd[i] - mean[c]) * inv_std[c];
                xh[i] = h;
                yd[i] = gd[c] * h + bd[c];
            }
        }
    }
    Ok((y, BnCache { xhat, inv_std, mean, var }))
}

/// Inference-mode batch norm using running statistics.
pub fn batchnorm_forward_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>, NnError> {
    let (rows, f) = bn_rows_features(x);
    if gamma.len() != f || beta.len() != f || running_mean.len() != f || running_var.len() != f {
        return Err(NnError::ShapeError(format!("batchnorm infer: feature mismatch for {f} features")));
    }
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let yd = y.data_mut();
    let gd = gamma.data();
    let bd = beta.data();
    let md = running_mean.data();
    let vd = running_var.data();
    let inv: Vec<T> = vd.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    for r in 0..rows {
        for c in 0..f {
            let i = r * f + c;
            yd[i] = gd[c] * (xd[i] - md[c]) * inv[c] + bd[c];
        }
    }
    Ok(y)
}

/// Backward of train-mode batch norm; returns (grad_x, grad_gamma, grad_beta).
pub fn batchnorm_backward<T: Scalar>(
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (rows, f) = bn_rows_features(&cache.xhat);
    if grad_y.shape() != cache.xhat.shape() {
        return Err(NnError::ShapeError("batchnorm backward: grad shape mismatch".into()));
    }
    let gy = grad_y.data();
    let xh = cache.xhat.data();
    let gd = gamma.data();
    let mut ggamma = Tensor::zeros(&[f]);
    let mut gbeta = Tensor::zeros(&[f]);
    // per-feature sums of g·xhat and g
    {
        let gg = ggamma.data_mut();
        let gb = gbeta.data_mut();
        for r in 0..rows {
            for c in 0..f {
                let i = r * f + c;
                gg[c] += gy[i] * xh[i];
                gb[c] += gy[i];
            }
        }
    }
    // grad_x = (gamma·inv_std/N) · (N·g − Σg − xhat·Σ(g·xhat))
    let mut gx = Tensor::zeros(cache.xhat.shape());
    {
        let gxd = gx.data_mut();
        let n = T::from_f(rows as f64);
        for r in 0..rows {
            for c in 0..f {
                let i = r * f + c;
                let term = n * gy[i] - gbeta.data()[c] - xh[i] * ggamma.data()[c];
                gxd[i] = gd[c] * cache.inv_std[c] / n * term;
            }
        }
    }
    Ok((gx, ggamma, gbeta))
}

// ── ReLU ────────────────────────────────────────────────────────────────────

/// Elementwise `max(0, x)`.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

/// Backward of ReLU given the forward *input*.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if x.shape() != grad_y.shape() {
        return Err(NnError::ShapeError("relu backward: shape mismatch".into()));
    }
    let mut gx = grad_y.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(x.data()) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
    Ok(gx)
}

// ── max pooling ─────────────────────────────────────────────────────────────

/// Non-overlapping 1-D max pool over the length axis: `[B,L,C] → [B,L/pool,C]`.
/// A trailing remainder shorter than `pool` is dropped. Also returns the flat
/// argmax index (into the input data) per output element.
pub fn maxpool1d_forward<T: Scalar>(x: &Tensor<T>, pool: usize) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    if x.rank() != 3 {
        return Err(NnError::ShapeError(format!("maxpool expects [B,L,C], got {:?}", x.shape())));
    }
    let (bs, l, c) = (x.dim(0), x.dim(1), x.dim(2));
    if pool == 0 || pool > l {
        return Err(NnError::ShapeError(format!("pool size {pool} invalid for length {l}")));
    }
    let lo = l / pool;
    let mut y = Tensor::zeros(&[bs, lo, c]);
    let mut arg = vec![0usize; bs * lo * c];
    let xd = x.data();
    let yd = y.data_mut();
    for bi in 0..bs {
        for wi in 0..lo {
            for ci in 0..c {
                let mut best = xd[(bi * l + wi * pool) * c + ci];
                let mut best_i = (bi * l + wi * pool) * c + ci;
                for j in 1..pool {
                    let idx = (bi * l + wi * pool + j) * c + ci;
                    if xd[idx] > best {
                        best = xd[idx];
                        best_i = idx;
                    }
                }
                let oi = (bi * lo + wi) * c + ci;
                yd[oi] = best;
                arg[oi] = best_i;
            }
        }
    }
    Ok((y, arg))
}

/// Backward of max pooling: routes each output gradient to its argmax input.
pub fn maxpool1d_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_y: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if grad_y.len() != argmax.len() {
        return Err(NnError::ShapeError("maxpool backward: argmax/grad length mismatch".into()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (g, &i) in grad_y.data().iter().zip(argmax) {
        gxd[i] += *g;
    }
    Ok(gx)
}

// ── dense ───────────────────────────────────────────────────────────────────

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Fully connected layer `y = g(x·W + b)` with `x [B,In]`, `W [In,Out]`,
/// `b [Out]`, `g ∈ {identity, relu, sigmoid}`.
pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    act: Activation,
) -> Result<Tensor<T>, NnError> {
    if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(NnError::ShapeError(format!(
            "dense expects x [B,In], w [In,Out], b [Out]; got {:?}, {:?}, {:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    let (bs, fin) = (x.dim(0), x.dim(1));
    let (wfin, fout) = (w.dim(0), w.dim(1));
    if fin != wfin || b.dim(0) != fout {
        return Err(NnError::ShapeError(format!(
            "dense mismatch: x has {fin} features, w expects {wfin}; bias {} for {fout} outputs",
            b.dim(0)
        )));
    }
    let mut y = Tensor::zeros(&[bs, fout]);
    let xd = x.data();
    let wd = w.data();
    let bd = b.data();
    let yd = y.data_mut();
    for bi in 0..bs {
        let yr = &mut yd[bi * fout..][..fout];
        yr.copy_from_slice(bd);
        let xr = &xd[bi * fin..][..fin];
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &wd[i * fout..][..fout];
            for o in 0..fout {
                yr[o] += xv * wr[o];
            }
        }
        match act {
            Activation::None => {}
            Activation::Relu => {
                for v in yr.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for v in yr.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
        }
    }
    Ok(y)
}

/// Backward of [`dense_forward`] given the cached input and *output* `y`
/// (the activations chosen here are all invertible enough at the gradient
/// level: relu needs `y > 0`, sigmoid needs `y·(1−y)`, identity needs
/// nothing). Returns (grad_x, grad_w, grad_b); `l2` adds `2·l2·w`.
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    y: &Tensor<T>,
    act: Activation,
    grad_y: &Tensor<T>,
    l2: T,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), NnError> {
    let (bs, fin) = (x.dim(0), x.dim(1));
    let fout = w.dim(1);
    if grad_y.shape() != [bs, fout] || y.shape() != [bs, fout] {
        return Err(NnError::ShapeError("dense backward: shape mismatch".into()));
    }
    // gradient w.r.t. the pre-activation
    let mut gpre = grad_y.clone();
    {
        let gp = gpre.data_mut();
        let yd = y.data();
        match act {
            Activation::None => {}
            Activation::Relu => {
                for (g, &v) in gp.iter_mut().zip(yd) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &v) in gp.iter_mut().zip(yd) {
                    *g *= v * (T::one() - v);
                }
            }
        }
    }
    let mut gx = Tensor::zeros(&[bs, fin]);
    let mut gw = Tensor::zeros(&[fin, fout]);
    let mut gb = Tensor::zeros(&[fout]);
    let xd = x.data();
    let wd = w.data();
    let gp = gpre.data();
    {
        let gxd = gx.data_mut();
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for bi in 0..bs {
            let gpr = &gp[bi * fout..][..fout];
            let xr = &xd[bi * fin..][..fin];
            let gxr = &mut gxd[bi * fin..][..fin];
            for o in 0..fout {
                gbd[o] += gpr[o];
            }
            for i in 0..fin {
                let wr = &wd[i * fout..][..fout];
                let gwr = &mut gwd[i * fout..][..fout];
                let xv = xr[i];
                let mut acc = T::zero();
                for o in 0..fout {
                    acc += gpr[o] * wr[o];
                    gwr[o] += xv * gpr[o];
                }
                gxr[i] += acc;
            }
        }
    }
    if l2 > T::zero() {
        let two = T::from_f(2.0);
        for (g, v) in gw.data_mut().iter_mut().zip(wd) {
            *g += two * l2 * *v;
        }
    }
    Ok((gx, gw, gb))
}

// ── dropout ─────────────────────────────────────────────────────────────────

/// Train-mode inverted dropout: zero each unit with probability `rate`,
/// scale survivors by `1/(1−rate)`. Returns the kept-mask for backward.
/// Inference mode is the identity — callers simply skip the layer.
pub fn dropout_forward_train<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Tensor<T>, Vec<bool>) {
    debug_assert!((0.0..1.0).contains(&rate));
    let scale = T::from_f(1.0 / (1.0 - rate));
    let mut y = x.clone();
    let mut mask = vec![true; x.len()];
    for (v, m) in y.data_mut().iter_mut().zip(mask.iter_mut()) {
        if rng.gen::<f64>() < rate {
            *v = T::zero();
            *m = false;
        } else {
            *v = *v * scale;
        }
    }
    (y, mask)
}

/// Backward of train-mode dropout.
pub fn dropout_backward<T: Scalar>(mask: &[bool], rate: f64, grad_y: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if mask.len() != grad_y.len() {
        return Err(NnError::ShapeError("dropout backward: mask/grad length mismatch".into()));
    }
    let scale = T::from_f(1.0 / (1.0 - rate));
    let mut gx = grad_y.clone();
    for (g, &m) in gx.data_mut().iter_mut().zip(mask) {
        *g = if m { *g * scale } else { T::zero() };
    }
    Ok(gx)
}

// ── L2 normalization ────────────────────────────────────────────────────────

/// Norm floor: rows with `‖x‖ < 1e-12` divide by `1e-12` instead, so the op
/// is total (an all-zero row stays all-zero rather than producing NaN).
const L2_NORM_FLOOR: f64 = 1e-12;

/// Row-wise projection onto the unit sphere: `y = x / max(‖x‖₂, 1e-12)`,
/// `x [B,F]`. Returns the effective norms for backward.
pub fn l2_normalize_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>), NnError> {
    if x.rank() != 2 {
        return Err(NnError::ShapeError(format!("l2_normalize expects [B,F], got {:?}", x.shape())));
    }
    let (bs, f) = (x.dim(0), x.dim(1));
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(bs);
    let floor = T::from_f(L2_NORM_FLOOR);
    for bi in 0..bs {
        let row = &mut y.data_mut()[bi * f..][..f];
        let mut s = T::zero();
        for v in row.iter() {
            s += *v * *v;
        }
        let n = s.sqrt().max(floor);
        for v in row.iter_mut() {
            *v = *v / n;
        }
        norms.push(n);
    }
    Ok((y, norms))
}

/// Backward of [`l2_normalize_forward`]:
/// `grad_x = (grad_y − y·(y·grad_y)) / ‖x‖`.
pub fn l2_normalize_backward<T: Scalar>(
    y: &Tensor<T>,
    norms: &[T],
    grad_y: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if y.shape() != grad_y.shape() || norms.len() != y.dim(0) {
        return Err(NnError::ShapeError("l2_normalize backward: shape mismatch".into()));
    }
    let (bs, f) = (y.dim(0), y.dim(1));
    let mut gx = Tensor::zeros(y.shape());
    let yd = y.data();
    let gyd = grad_y.data();
    let gxd = gx.data_mut();
    for bi in 0..bs {
        let yr = &yd[bi * f..][..f];
        let gyr = &gyd[bi * f..][..f];
        let mut dot = T::zero();
        for (a, b) in yr.iter().zip(gyr) {
            dot += *a * *b;
        }
        let gxr = &mut gxd[bi * f..][..f];
        for i in 0..f {
            gxr[i] = (gyr[i] - yr[i] * dot) / norms[bi];
        }
    }
    Ok(gx)
}

// ── tests ───────────────────────────────────────────────────────────────────
