//! Forward and reverse-mode kernels.
//!
//! Batch reductions are split into fixed-size chunks processed independently
//! (possibly in parallel) and combined by an adjacent-pair tree reduction, so
//! results are bit-identical for any thread count. Cross-entropy is accumulated
//! in f64.

use super::plan::{Plan, PlanLayer};
use super::scalar::Real;
use super::{Batch, ModelSpec, WeightVector};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Items per reduction chunk; fixed so the summation tree never depends on
/// thread count.
const CHUNK: usize = 8;

#[inline]
fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc0 = F::ZERO;
    let mut acc1 = F::ZERO;
    let mut acc2 = F::ZERO;
    let mut acc3 = F::ZERO;
    let quads = a.len() / 4;
    for i in 0..quads {
        let j = 4 * i;
        acc0 += a[j] * b[j];
        acc1 += a[j + 1] * b[j + 1];
        acc2 += a[j + 2] * b[j + 2];
        acc3 += a[j + 3] * b[j + 3];
    }
    let mut acc = (acc0 + acc1) + (acc2 + acc3);
    for j in 4 * quads..a.len() {
        acc += a[j] * b[j];
    }
    acc
}

#[inline]
fn axpy<F: Real>(y: &mut [F], a: F, x: &[F]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Output index range [lo, hi) with 0 <= o*stride + k_off - pad < in_n.
#[inline]
fn conv_range(out_n: usize, in_n: usize, stride: usize, pad: usize, k_off: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off).div_ceil(stride)
    };
    let hi = match (in_n - 1 + pad).checked_sub(k_off) {
        None => return (0, 0),
        Some(v) => (v / stride + 1).min(out_n),
    };
    (lo.min(hi), hi)
}

struct ConvDims {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    w_off: usize,
    b_off: usize,
}

impl ConvDims {
    fn from_layer(l: &PlanLayer) -> ConvDims {
        match *l {
            PlanLayer::Conv {
                in_c,
                in_h,
                in_w,
                out_c,
                out_h,
                out_w,
                kernel,
                stride,
                padding,
                w_off,
                b_off,
            } => ConvDims {
                in_c,
                in_h,
                in_w,
                out_c,
                out_h,
                out_w,
                kernel,
                stride,
                padding,
                w_off,
                b_off,
            },
            _ => unreachable!("not a conv layer"),
        }
    }
}

/// Unrolls the input into a [k*k*in_c, out_h*out_w] column buffer so conv
/// forward/backward become long contiguous axpy/dot sweeps.
fn im2col<F: Real>(d: &ConvDims, x: &[F], col: &mut [F]) {
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    debug_assert_eq!(col.len(), d.in_c * d.kernel * d.kernel * out_plane);
    for v in col.iter_mut() {
        *v = F::ZERO;
    }
    for ic in 0..d.in_c {
        let xp = &x[ic * in_plane..(ic + 1) * in_plane];
        for kh in 0..d.kernel {
            let (oy_lo, oy_hi) = conv_range(d.out_h, d.in_h, d.stride, d.padding, kh);
            for kw in 0..d.kernel {
                let j = (ic * d.kernel + kh) * d.kernel + kw;
                let row = &mut col[j * out_plane..(j + 1) * out_plane];
                let (ox_lo, ox_hi) = conv_range(d.out_w, d.in_w, d.stride, d.padding, kw);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * d.stride + kh - d.padding;
                    if d.stride == 1 {
                        let ix0 = ox_lo + kw - d.padding;
                        let n = ox_hi - ox_lo;
                        row[oy * d.out_w + ox_lo..oy * d.out_w + ox_lo + n]
                            .copy_from_slice(&xp[iy * d.in_w + ix0..iy * d.in_w + ix0 + n]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * d.stride + kw - d.padding;
                            row[oy * d.out_w + ox] = xp[iy * d.in_w + ix];
                        }
                    }
                }
            }
        }
    }
}

/// Scatters a column-space gradient back to input space (adjoint of im2col).
fn col2im_accumulate<F: Real>(d: &ConvDims, dcol: &[F], dx: &mut [F]) {
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    for ic in 0..d.in_c {
        let dxp = &mut dx[ic * in_plane..(ic + 1) * in_plane];
        for kh in 0..d.kernel {
            let (oy_lo, oy_hi) = conv_range(d.out_h, d.in_h, d.stride, d.padding, kh);
            for kw in 0..d.kernel {
                let j = (ic * d.kernel + kh) * d.kernel + kw;
                let row = &dcol[j * out_plane..(j + 1) * out_plane];
                let (ox_lo, ox_hi) = conv_range(d.out_w, d.in_w, d.stride, d.padding, kw);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in oy_lo..oy_hi {
                    let iy = oy * d.stride + kh - d.padding;
                    if d.stride == 1 {
                        let ix0 = ox_lo + kw - d.padding;
                        let n = ox_hi - ox_lo;
                        let dst = &mut dxp[iy * d.in_w + ix0..iy * d.in_w + ix0 + n];
                        let src = &row[oy * d.out_w + ox_lo..oy * d.out_w + ox_lo + n];
                        for (a, &b) in dst.iter_mut().zip(src) {
                            *a += b;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * d.stride + kw - d.padding;
                            dxp[iy * d.in_w + ix] += row[oy * d.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<F: Real>(d: &ConvDims, w: &[F], x: &[F], out: &mut [F]) {
    let out_plane = d.out_h * d.out_w;
    let patch = d.in_c * d.kernel * d.kernel;
    let mut col = vec![F::ZERO; patch * out_plane];
    im2col(d, x, &mut col);
    for oc in 0..d.out_c {
        let plane = &mut out[oc * out_plane..(oc + 1) * out_plane];
        let bias = w[d.b_off + oc];
        for v in plane.iter_mut() {
            *v = bias;
        }
        for j in 0..patch {
            let wv = w[d.w_off + oc * patch + j];
            axpy(plane, wv, &col[j * out_plane..(j + 1) * out_plane]);
        }
    }
}

/// Backward for one conv layer. `x` is only needed when weight grads are requested.
fn conv_backward<F: Real>(
    d: &ConvDims,
    w: &[F],
    x: Option<&[F]>,
    dy: &[F],
    grad: Option<&mut [F]>,
    dx: Option<&mut [F]>,
) {
    let out_plane = d.out_h * d.out_w;
    let patch = d.in_c * d.kernel * d.kernel;

    if let Some(grad) = grad {
        let x = x.expect("weight grads need the layer input");
        let mut col = vec![F::ZERO; patch * out_plane];
        im2col(d, x, &mut col);
        for oc in 0..d.out_c {
            let dyp = &dy[oc * out_plane..(oc + 1) * out_plane];
            let mut db = F::ZERO;
            for &v in dyp {
                db += v;
            }
            grad[d.b_off + oc] += db;
            for j in 0..patch {
                grad[d.w_off + oc * patch + j] +=
                    dot(dyp, &col[j * out_plane..(j + 1) * out_plane]);
            }
        }
    }

    if let Some(dx) = dx {
        let mut dcol = vec![F::ZERO; patch * out_plane];
        for oc in 0..d.out_c {
            let dyp = &dy[oc * out_plane..(oc + 1) * out_plane];
            for j in 0..patch {
                let wv = w[d.w_off + oc * patch + j];
                axpy(&mut dcol[j * out_plane..(j + 1) * out_plane], wv, dyp);
            }
        }
        col2im_accumulate(d, &dcol, dx);
    }
}

/// Per-item forward trace: every layer output, plus pooling argmax indices.
pub(crate) struct ItemCapture<F> {
    outs: Vec<Vec<F>>,
    pool_idx: Vec<Vec<u32>>,
}

fn apply_layer<F: Real>(
    plan: &Plan,
    i: usize,
    w: &[F],
    input: &[F],
    pool_idx: Option<&mut Vec<u32>>,
) -> Vec<F> {
    let layer = &plan.layers[i];
    match layer {
        PlanLayer::Conv { .. } => {
            let d = ConvDims::from_layer(layer);
            let mut out = vec![F::ZERO; layer.out_len()];
            conv_forward(&d, w, input, &mut out);
            out
        }
        PlanLayer::Relu { .. } => input
            .iter()
            .map(|&v| if v > F::ZERO { v } else { F::ZERO })
            .collect(),
        PlanLayer::MaxPool {
            c,
            in_h,
            in_w,
            kernel,
            out_h,
            out_w,
        } => {
            let (c, in_h, in_w, k, out_h, out_w) = (*c, *in_h, *in_w, *kernel, *out_h, *out_w);
            let mut out = vec![F::ZERO; c * out_h * out_w];
            let mut idx = vec![0u32; c * out_h * out_w];
            let in_plane = in_h * in_w;
            for ch in 0..c {
                let xp = &input[ch * in_plane..(ch + 1) * in_plane];
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut best = xp[oy * k * in_w + ox * k];
                        let mut best_i = (oy * k * in_w + ox * k) as u32;
                        for dy in 0..k {
                            for dxx in 0..k {
                                let fi = (oy * k + dy) * in_w + ox * k + dxx;
                                // First maximum wins so ties break deterministically.
                                if xp[fi] > best {
                                    best = xp[fi];
                                    best_i = fi as u32;
                                }
                            }
                        }
                        out[ch * out_h * out_w + oy * out_w + ox] = best;
                        idx[ch * out_h * out_w + oy * out_w + ox] = best_i;
                    }
                }
            }
            if let Some(slot) = pool_idx {
                *slot = idx;
            }
            out
        }
        PlanLayer::Flatten { .. } => input.to_vec(),
        PlanLayer::Dense {
            in_f,
            out_f,
            w_off,
            b_off,
        } => {
            let (in_f, out_f, w_off, b_off) = (*in_f, *out_f, *w_off, *b_off);
            let mut out = vec![F::ZERO; out_f];
            for (o, slot) in out.iter_mut().enumerate() {
                *slot = w[b_off + o] + dot(&w[w_off + o * in_f..w_off + (o + 1) * in_f], input);
            }
            out
        }
    }
}

/// Runs layers `[0, upto)`; returns the last output without keeping traces.
fn forward_item<F: Real>(plan: &Plan, w: &[F], x: &[F], upto: usize) -> Vec<F> {
    let mut cur = x.to_vec();
    for i in 0..upto {
        cur = apply_layer(plan, i, w, &cur, None);
    }
    cur
}

/// Runs layers `[0, upto)` keeping every output for a later backward pass.
fn forward_item_captured<F: Real>(plan: &Plan, w: &[F], x: &[F], upto: usize) -> ItemCapture<F> {
    let mut outs: Vec<Vec<F>> = Vec::with_capacity(upto);
    let mut pool_idx: Vec<Vec<u32>> = vec![Vec::new(); upto];
    for i in 0..upto {
        let input = if i == 0 { x } else { &outs[i - 1] };
        let out = apply_layer(plan, i, w, input, Some(&mut pool_idx[i]));
        outs.push(out);
    }
    ItemCapture { outs, pool_idx }
}

/// Backward over layers `[0, upto)` from gradient `d` at the output of layer
/// `upto - 1`. Accumulates weight grads into `grad` (needs `x`) and returns the
/// input gradient when `want_dx`.
fn backward_item<F: Real>(
    plan: &Plan,
    w: &[F],
    x: Option<&[F]>,
    cap: &ItemCapture<F>,
    upto: usize,
    mut d: Vec<F>,
    mut grad: Option<&mut [F]>,
    want_dx: bool,
) -> Option<Vec<F>> {
    for i in (0..upto).rev() {
        let need_below = i > 0 || want_dx;
        let layer = &plan.layers[i];
        let input: Option<&[F]> = if i == 0 {
            x
        } else {
            Some(&cap.outs[i - 1])
        };
        d = match layer {
            PlanLayer::Conv {
                in_c, in_h, in_w, ..
            } => {
                let dims = ConvDims::from_layer(layer);
                let mut dx_buf = if need_below {
                    Some(vec![F::ZERO; in_c * in_h * in_w])
                } else {
                    None
                };
                conv_backward(
                    &dims,
                    w,
                    input,
                    &d,
                    grad.as_deref_mut(),
                    dx_buf.as_deref_mut(),
                );
                match dx_buf {
                    Some(b) => b,
                    None => return None,
                }
            }
            PlanLayer::Relu { .. } => {
                if !need_below {
                    return None;
                }
                let out = &cap.outs[i];
                d.iter()
                    .zip(out)
                    .map(|(&g, &o)| if o > F::ZERO { g } else { F::ZERO })
                    .collect()
            }
            PlanLayer::MaxPool {
                c,
                in_h,
                in_w,
                out_h,
                out_w,
                ..
            } => {
                if !need_below {
                    return None;
                }
                let (c, in_h, in_w, out_h, out_w) = (*c, *in_h, *in_w, *out_h, *out_w);
                let idx = &cap.pool_idx[i];
                let mut dx = vec![F::ZERO; c * in_h * in_w];
                let in_plane = in_h * in_w;
                let out_plane = out_h * out_w;
                for ch in 0..c {
                    for o in 0..out_plane {
                        dx[ch * in_plane + idx[ch * out_plane + o] as usize] +=
                            d[ch * out_plane + o];
                    }
                }
                dx
            }
            PlanLayer::Flatten { .. } => {
                if !need_below {
                    return None;
                }
                d
            }
            PlanLayer::Dense {
                in_f,
                out_f,
                w_off,
                b_off,
            } => {
                let (in_f, out_f, w_off, b_off) = (*in_f, *out_f, *w_off, *b_off);
                if let Some(g) = grad.as_deref_mut() {
                    let xin = input.expect("dense weight grads need the layer input");
                    for o in 0..out_f {
                        g[b_off + o] += d[o];
                        axpy(&mut g[w_off + o * in_f..w_off + (o + 1) * in_f], d[o], xin);
                    }
                }
                if !need_below {
                    return None;
                }
                let mut dx = vec![F::ZERO; in_f];
                for o in 0..out_f {
                    axpy(&mut dx, d[o], &w[w_off + o * in_f..w_off + (o + 1) * in_f]);
                }
                dx
            }
        };
    }
    if want_dx {
        Some(d)
    } else {
        None
    }
}

/// Softmax cross-entropy of one logit row, accumulated in f64.
/// Returns (loss, d_logits) where d_logits = softmax - onehot(label).
fn ce_row<F: Real>(logits: &[F], label: usize) -> (f64, Vec<F>) {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        max = max.max(l.to_f64());
    }
    let mut sum = 0.0f64;
    let mut exps = vec![0.0f64; logits.len()];
    for (i, &l) in logits.iter().enumerate() {
        let e = (l.to_f64() - max).exp();
        exps[i] = e;
        sum += e;
    }
    let loss = sum.ln() - (logits[label].to_f64() - max);
    let d = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = e / sum;
            F::from_f64(if i == label { p - 1.0 } else { p })
        })
        .collect();
    (loss, d)
}

fn tree_reduce<T>(mut items: Vec<T>, combine: impl Fn(T, T) -> T) -> T {
    assert!(!items.is_empty());
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop().unwrap()
}

fn to_f<F: Real>(xs: &[f32]) -> Vec<F> {
    xs.iter().map(|&v| F::from_f32(v)).collect()
}

fn validate_weights(plan: &Plan, w: &WeightVector) -> Result<()> {
    if !w.same_layout(&plan.layout()) {
        return Err(Error::LayoutMismatch(format!(
            "weight vector (len {}) does not match model layout (len {})",
            w.total_len(),
            plan.total_params()
        )));
    }
    Ok(())
}

fn validate_batch(plan: &Plan, batch: &Batch) -> Result<()> {
    if batch.shape != plan.input_shape {
        return Err(Error::InvalidData(format!(
            "batch shape {:?} does not match model input {:?}",
            batch.shape, plan.input_shape
        )));
    }
    Ok(())
}

fn validate_labels(plan: &Plan, labels: &[u16]) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= plan.class_count) {
        return Err(Error::InvalidData(format!(
            "label {bad} out of range for {} classes",
            plan.class_count
        )));
    }
    Ok(())
}

pub(crate) fn forward_batch_values<F: Real>(
    plan: &Plan,
    w: &[F],
    images: &[F],
    n: usize,
) -> Vec<F> {
    let item_len = plan.input_len();
    let classes = plan.class_count;
    let upto = plan.layers.len();
    let mut logits = vec![F::ZERO; n * classes];
    logits
        .par_chunks_mut(classes)
        .zip(images.par_chunks(item_len))
        .for_each(|(row, x)| {
            row.copy_from_slice(&forward_item(plan, w, x, upto));
        });
    logits
}

/// Logits for every batch item, row-major `[n, class_count]`. Pure in (w, b).
pub fn forward(w: &WeightVector, spec: &ModelSpec, batch: &Batch) -> Result<Vec<f32>> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    validate_batch(&plan, batch)?;
    Ok(forward_batch_values(
        &plan,
        &w.values,
        &batch.images,
        batch.len(),
    ))
}

/// (mean loss, grad, #correct) over a batch with fixed-chunk deterministic
/// reduction; `correct` counts argmax-vs-label hits for epoch accuracy.
pub(crate) fn loss_grad_counts<F: Real>(
    plan: &Plan,
    w: &[F],
    images: &[F],
    labels: &[u16],
) -> (f64, Vec<F>, usize) {
    let n = labels.len();
    let item_len = plan.input_len();
    let upto = plan.layers.len();
    let n_chunks = n.div_ceil(CHUNK);

    let partials: Vec<(f64, Vec<F>, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * CHUNK;
            let hi = ((ci + 1) * CHUNK).min(n);
            let mut grad = vec![F::ZERO; plan.total_params()];
            let mut loss = 0.0f64;
            let mut correct = 0usize;
            for i in lo..hi {
                let x = &images[i * item_len..(i + 1) * item_len];
                let cap = forward_item_captured(plan, w, x, upto);
                let logits = &cap.outs[upto - 1];
                let label = labels[i] as usize;
                let (l, dlogits) = ce_row(logits, label);
                loss += l;
                if argmax_f(logits) == label {
                    correct += 1;
                }
                backward_item(plan, w, Some(x), &cap, upto, dlogits, Some(&mut grad), false);
            }
            (loss, grad, correct)
        })
        .collect();

    let (loss_sum, mut grad, correct) = tree_reduce(partials, |(la, mut ga, ca), (lb, gb, cb)| {
        for (a, b) in ga.iter_mut().zip(&gb) {
            *a += *b;
        }
        (la + lb, ga, ca + cb)
    });

    let inv_n = 1.0 / n as f64;
    for g in &mut grad {
        *g = F::from_f64(g.to_f64() * inv_n);
    }
    (loss_sum * inv_n, grad, correct)
}

fn argmax_f<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient with the layout of `w`.
pub fn loss_and_grad(w: &WeightVector, spec: &ModelSpec, batch: &Batch) -> Result<(f64, WeightVector)> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    validate_batch(&plan, batch)?;
    validate_labels(&plan, &batch.labels)?;
    let (loss, grad, _) = loss_grad_counts(&plan, &w.values, &batch.images, &batch.labels);
    Ok((
        loss,
        WeightVector {
            values: grad,
            layout: plan.layout(),
        },
    ))
}

/// f64 twin of [`loss_and_grad`] over raw weight values, for oracle-grade checks.
pub fn loss_and_grad_f64(
    weight_values: &[f64],
    spec: &ModelSpec,
    batch: &Batch,
) -> Result<(f64, Vec<f64>)> {
    let plan = spec.plan()?;
    if weight_values.len() != plan.total_params() {
        return Err(Error::LayoutMismatch(format!(
            "got {} weight values, model has {}",
            weight_values.len(),
            plan.total_params()
        )));
    }
    validate_batch(&plan, batch)?;
    validate_labels(&plan, &batch.labels)?;
    let images: Vec<f64> = to_f(&batch.images);
    let (loss, grad, _) = loss_grad_counts(&plan, weight_values, &images, &batch.labels);
    Ok((loss, grad))
}

/// Mean cross-entropy computed entirely in f64 (finite-difference oracle path).
pub fn loss_f64(weight_values: &[f64], spec: &ModelSpec, batch: &Batch) -> Result<f64> {
    let plan = spec.plan()?;
    if weight_values.len() != plan.total_params() {
        return Err(Error::LayoutMismatch(format!(
            "got {} weight values, model has {}",
            weight_values.len(),
            plan.total_params()
        )));
    }
    validate_batch(&plan, batch)?;
    validate_labels(&plan, &batch.labels)?;
    let images: Vec<f64> = to_f(&batch.images);
    let item_len = plan.input_len();
    let upto = plan.layers.len();
    let mut loss = 0.0f64;
    for i in 0..batch.len() {
        let x = &images[i * item_len..(i + 1) * item_len];
        let logits = forward_item(&plan, weight_values, x, upto);
        loss += ce_row::<f64>(&logits, batch.labels[i] as usize).0;
    }
    Ok(loss / batch.len() as f64)
}

/// Activations at the penultimate layer (input to the final dense layer),
/// row-major `[n, d]`. Errors when the spec has no dense layer.
pub fn embed(w: &WeightVector, spec: &ModelSpec, batch: &Batch) -> Result<(Vec<f32>, usize)> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    validate_batch(&plan, batch)?;
    let upto = plan
        .last_dense
        .ok_or_else(|| Error::InvalidConfig("embed requires at least one dense layer".into()))?;
    let dim = plan.embed_dim().unwrap();
    let item_len = plan.input_len();
    let n = batch.len();
    let mut feats = vec![0.0f32; n * dim];
    feats
        .par_chunks_mut(dim)
        .zip(batch.images.par_chunks(item_len))
        .for_each(|(row, x)| {
            // upto == 0 would mean the first layer is dense: embedding is the input.
            if upto == 0 {
                row.copy_from_slice(x);
            } else {
                row.copy_from_slice(&forward_item(&plan, &w.values, x, upto));
            }
        });
    Ok((feats, dim))
}

/// Retained forward traces for a batch, for input-gradient backward passes.
pub struct BatchCapture {
    caps: Vec<ItemCapture<f32>>,
    upto: usize,
    item_len: usize,
    embed_dim: usize,
}

/// Embeddings plus retained traces; pair with [`grad_from_embedding`].
pub fn embed_captured(
    w: &WeightVector,
    spec: &ModelSpec,
    images: &[f32],
    n: usize,
) -> Result<(Vec<f32>, BatchCapture)> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    let upto = plan
        .last_dense
        .ok_or_else(|| Error::InvalidConfig("embed requires at least one dense layer".into()))?;
    let dim = plan.embed_dim().unwrap();
    let item_len = plan.input_len();
    if images.len() != n * item_len {
        return Err(Error::InvalidData(format!(
            "image buffer has {} values, expected {}",
            images.len(),
            n * item_len
        )));
    }
    let caps: Vec<ItemCapture<f32>> = (0..n)
        .into_par_iter()
        .map(|i| forward_item_captured(&plan, &w.values, &images[i * item_len..(i + 1) * item_len], upto))
        .collect();
    let mut feats = vec![0.0f32; n * dim];
    for (i, cap) in caps.iter().enumerate() {
        if upto > 0 {
            feats[i * dim..(i + 1) * dim].copy_from_slice(&cap.outs[upto - 1]);
        } else {
            feats[i * dim..(i + 1) * dim].copy_from_slice(&images[i * item_len..(i + 1) * item_len]);
        }
    }
    Ok((
        feats,
        BatchCapture {
            caps,
            upto,
            item_len,
            embed_dim: dim,
        },
    ))
}

/// Propagates an embedding-space gradient back to the input pixels.
/// `d_embed` is row-major `[n, d]`; the result is row-major image gradients.
pub fn grad_from_embedding(
    w: &WeightVector,
    spec: &ModelSpec,
    capture: &BatchCapture,
    d_embed: &[f32],
) -> Result<Vec<f32>> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    let n = capture.caps.len();
    if d_embed.len() != n * capture.embed_dim {
        return Err(Error::InvalidData(format!(
            "gradient buffer has {} values, expected {}",
            d_embed.len(),
            n * capture.embed_dim
        )));
    }
    let item_len = capture.item_len;
    let mut dx = vec![0.0f32; n * item_len];
    dx.par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(i, out)| {
            let d = d_embed[i * capture.embed_dim..(i + 1) * capture.embed_dim].to_vec();
            if capture.upto == 0 {
                out.copy_from_slice(&d);
            } else {
                let g = backward_item(
                    &plan,
                    &w.values,
                    None,
                    &capture.caps[i],
                    capture.upto,
                    d,
                    None,
                    true,
                )
                .unwrap();
                out.copy_from_slice(&g);
            }
        });
    Ok(dx)
}

/// Mean cross-entropy toward `labels` and its gradient w.r.t. the input pixels.
pub fn input_grad_cross_entropy(
    w: &WeightVector,
    spec: &ModelSpec,
    images: &[f32],
    labels: &[u16],
) -> Result<(f64, Vec<f32>)> {
    let plan = spec.plan()?;
    validate_weights(&plan, w)?;
    validate_labels(&plan, labels)?;
    let item_len = plan.input_len();
    let n = labels.len();
    if images.len() != n * item_len {
        return Err(Error::InvalidData(format!(
            "image buffer has {} values, expected {}",
            images.len(),
            n * item_len
        )));
    }
    let upto = plan.layers.len();
    let results: Vec<(f64, Vec<f32>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = &images[i * item_len..(i + 1) * item_len];
            let cap = forward_item_captured(&plan, &w.values, x, upto);
            let (l, dlogits) = ce_row::<f32>(&cap.outs[upto - 1], labels[i] as usize);
            let dx = backward_item(&plan, &w.values, None, &cap, upto, dlogits, None, true).unwrap();
            (l, dx)
        })
        .collect();
    let mut loss = 0.0f64;
    let mut dx = vec![0.0f32; n * item_len];
    for (i, (l, g)) in results.iter().enumerate() {
        loss += l;
        let inv_n = 1.0 / n as f32;
        for (slot, &v) in dx[i * item_len..(i + 1) * item_len].iter_mut().zip(g) {
            *slot = v * inv_n;
        }
    }
    Ok((loss / n as f64, dx))
}
