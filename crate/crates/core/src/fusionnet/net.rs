//! Stack of 3x3 "same" convolutions: tanh on hidden layers, per-class
//! sigmoid on the last one. Planar (channel-major) tensors throughout.
//!
//! The math is generic over the float type so the same code path serves
//! `f32` training and `f64` gradient checking.

use num_traits::Float;

/// Layer shapes of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub in_channels: usize,
    /// Output width of each layer; the last entry is the class count.
    pub widths: Vec<usize>,
}

impl Architecture {
    pub fn classes(&self) -> usize {
        *self.widths.last().expect("at least one layer")
    }

    /// `(in, out)` channels of every layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut cin = self.in_channels;
        self.widths
            .iter()
            .map(|&cout| {
                let l = (cin, cout);
                cin = cout;
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|&(i, o)| o * i * 9 + o).sum()
    }

    /// `(weight offset, bias offset)` of every layer in the flat parameter vector.
    pub fn offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers()
            .iter()
            .map(|&(i, o)| {
                let w = off;
                let b = w + o * i * 9;
                off = b + o;
                (w, b)
            })
            .collect()
    }

    /// Indices of all weights (not biases) in the parameter vector.
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.offsets().into_iter().map(|(w, b)| w..b).collect()
    }
}

#[inline]
fn row_range(len: usize, d: isize) -> (usize, usize) {
    // output positions x with 0 <= x + d < len
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `out[o] = bias[o] + sum_i w[o, i] * in[i]` with zero padding.
fn conv_forward<T: Float>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    cout: usize,
    out: &mut [T],
) {
    let plane = h * w;
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let k = &weights[(o * cin + i) * 9..(o * cin + i) * 9 + 9];
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = row_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let wv = k[ky * 3 + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let (x0, x1) = row_range(w, dx);
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s_start = (x0 as isize + dx) as usize + sy * w;
                        let s = &src[s_start..s_start + (x1 - x0)];
                        for (dv, &sv) in d.iter_mut().zip(s) {
                            *dv = *dv + wv * sv;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients of one layer.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Float>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[T],
    cout: usize,
    grad_out: &[T],
    grad_w: &mut [T],
    grad_b: &mut [T],
    mut grad_in: Option<&mut [T]>,
) {
    let plane = h * w;
    for o in 0..cout {
        let g = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] = grad_b[o] + g.iter().fold(T::zero(), |a, &v| a + v);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let kidx = (o * cin + i) * 9;
            for ky in 0..3 {
                let dy = ky as isize - 1;
                let (y0, y1) = row_range(h, dy);
                for kx in 0..3 {
                    let dx = kx as isize - 1;
                    let (x0, x1) = row_range(w, dx);
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        let s_start = (x0 as isize + dx) as usize + sy * w;
                        let s = &src[s_start..s_start + (x1 - x0)];
                        acc = acc
                            + gr.iter()
                                .zip(s)
                                .fold(T::zero(), |a, (&gv, &sv)| a + gv * sv);
                    }
                    grad_w[kidx + ky * 3 + kx] = grad_w[kidx + ky * 3 + kx] + acc;
                    if let Some(gin) = grad_in.as_deref_mut() {
                        let wv = weights[kidx + ky * 3 + kx];
                        let gi = &mut gin[i * plane..(i + 1) * plane];
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let gr = &g[y * w + x0..y * w + x1];
                            let d_start = (x0 as isize + dx) as usize + sy * w;
                            let d = &mut gi[d_start..d_start + (x1 - x0)];
                            for (dv, &gv) in d.iter_mut().zip(gr) {
                                *dv = *dv + wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Activations of every layer for one image. `acts[0]` is the input,
/// `acts[l + 1]` the (post-nonlinearity) output of layer `l`; the last
/// entry holds logits.
pub struct Forward<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Float> Forward<T> {
    pub fn logits(&self) -> &[T] {
        self.acts.last().expect("non-empty")
    }
}

pub fn forward<T: Float>(
    arch: &Architecture,
    params: &[T],
    input: &[T],
    h: usize,
    w: usize,
) -> Forward<T> {
    let plane = h * w;
    debug_assert_eq!(input.len(), arch.in_channels * plane);
    let layers = arch.layers();
    let offsets = arch.offsets();
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input.to_vec());
    for (l, (&(cin, cout), &(wo, bo))) in layers.iter().zip(&offsets).enumerate() {
        let mut out = vec![T::zero(); cout * plane];
        conv_forward(
            &acts[l],
            cin,
            h,
            w,
            &params[wo..bo],
            &params[bo..bo + cout],
            cout,
            &mut out,
        );
        if l + 1 < layers.len() {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        acts.push(out);
    }
    Forward { acts }
}

/// Sigmoid probabilities, planar `K x H x W`.
pub fn probabilities<T: Float>(
    arch: &Architecture,
    params: &[T],
    input: &[T],
    h: usize,
    w: usize,
) -> Vec<T> {
    forward(arch, params, input, h, w)
        .logits()
        .iter()
        .map(|&z| sigmoid(z))
        .collect()
}

/// Mean per-pixel, per-class sigmoid cross-entropy of one image and its
/// gradient (accumulated into `grad` with weight `scale`). Targets are planar
/// `K x H x W` in {0, 1}.
pub fn image_loss_grad<T: Float>(
    arch: &Architecture,
    params: &[T],
    input: &[T],
    targets: &[T],
    h: usize,
    w: usize,
    scale: T,
    grad: Option<&mut [T]>,
) -> T {
    let fwd = forward(arch, params, input, h, w);
    let logits = fwd.logits();
    let n = T::from(logits.len()).expect("count fits");
    let mut loss = T::zero();
    let mut delta: Vec<T> = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        // max(z, 0) - z y + log(1 + exp(-|z|))
        loss = loss + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        delta.push((sigmoid(z) - y) * scale / n);
    }
    let loss = loss / n;
    let Some(grad) = grad else {
        return loss;
    };

    let layers = arch.layers();
    let offsets = arch.offsets();
    for l in (0..layers.len()).rev() {
        let (cin, cout) = layers[l];
        let (wo, bo) = offsets[l];
        let (gw, rest) = grad[wo..].split_at_mut(bo - wo);
        let gb = &mut rest[..cout];
        let mut grad_in = (l > 0).then(|| vec![T::zero(); cin * h * w]);
        conv_backward(
            &fwd.acts[l],
            cin,
            h,
            w,
            &params[wo..bo],
            cout,
            &delta,
            gw,
            gb,
            grad_in.as_deref_mut(),
        );
        if let Some(mut gi) = grad_in {
            // through tanh of the previous layer
            for (g, &a) in gi.iter_mut().zip(&fwd.acts[l]) {
                *g = *g * (T::one() - a * a);
            }
            delta = gi;
        }
    }
    loss
}

/// `lambda * sum(w^2)` over weights, with its gradient added into `grad`.
pub fn l2_penalty<T: Float>(
    arch: &Architecture,
    params: &[T],
    lambda: T,
    grad: Option<&mut [T]>,
) -> T {
    let mut total = T::zero();
    let ranges = arch.weight_ranges();
    for r in &ranges {
        total = total + params[r.clone()].iter().fold(T::zero(), |a, &v| a + v * v);
    }
    if let Some(g) = grad {
        let two = T::one() + T::one();
        for r in ranges {
            for i in r {
                g[i] = g[i] + two * lambda * params[i];
            }
        }
    }
    lambda * total
}
