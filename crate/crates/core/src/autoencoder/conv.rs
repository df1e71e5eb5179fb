//! 1-D convolution and transposed convolution over `[channels x length]`
//! row-major buffers, lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

/// Row-major `c = alpha * op(a) * op(b) + beta * c` with `op` selected by
/// the transpose flags. `a` is stored `m x k` (or `k x m` when transposed).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe exactly the buffers whose lengths
    // were checked, and `c` does not alias `a` or `b`.
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

/// Geometry shared by im2col and col2im: `positions` columns, each reading
/// `kernel` taps starting at `pos * stride - padding`.
#[derive(Debug, Clone, Copy)]
struct Taps {
    kernel: usize,
    stride: usize,
    padding: usize,
    positions: usize,
}

impl Taps {
    #[inline]
    fn index(&self, pos: usize, tap: usize, len: usize) -> Option<usize> {
        let idx = (pos * self.stride + tap).checked_sub(self.padding)?;
        (idx < len).then_some(idx)
    }
}

/// `cols[(c*k + t) * positions + o] = src[c, o*s - p + t]`, zero outside.
fn im2col(src: &[f64], channels: usize, len: usize, g: Taps) -> Vec<f64> {
    let mut cols = vec![0.0; channels * g.kernel * g.positions];
    for c in 0..channels {
        let row = &src[c * len..(c + 1) * len];
        for t in 0..g.kernel {
            let dst = &mut cols[(c * g.kernel + t) * g.positions..][..g.positions];
            for (o, d) in dst.iter_mut().enumerate() {
                if let Some(i) = g.index(o, t, len) {
                    *d = row[i];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
fn col2im(cols: &[f64], channels: usize, dst: &mut [f64], len: usize, g: Taps) {
    for c in 0..channels {
        let row = &mut dst[c * len..(c + 1) * len];
        for t in 0..g.kernel {
            let src = &cols[(c * g.kernel + t) * g.positions..][..g.positions];
            for (o, &v) in src.iter().enumerate() {
                if let Some(i) = g.index(o, t, len) {
                    row[i] += v;
                }
            }
        }
    }
}

/// One convolutional layer, optionally transposed, optionally rectified.
///
/// Weight layout is `[out][in][k]` for a plain convolution and `[in][out][k]`
/// for a transposed one, so that in both cases the weight buffer is the
/// matrix applied to the input channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub transposed: bool,
    pub relu: bool,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// What a layer's backward pass needs from its forward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    input: Vec<f64>,
    in_len: usize,
    /// im2col of the input (plain conv only).
    cols: Vec<f64>,
    /// Post-activation output, used for the ReLU mask.
    output: Vec<f64>,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        transposed: bool,
        relu: bool,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
            transposed,
            relu,
            weight: vec![0.0; in_channels * out_channels * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        if self.transposed {
            (in_len - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
        } else {
            (in_len + 2 * self.padding - self.kernel) / self.stride + 1
        }
    }

    /// Inputs contributing to one output position, used for initialization.
    pub fn fan_in(&self) -> usize {
        if self.transposed {
            (self.in_channels * self.kernel).div_ceil(self.stride)
        } else {
            self.in_channels * self.kernel
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn taps(&self, positions: usize) -> Taps {
        Taps {
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            positions,
        }
    }

    pub(crate) fn forward(&self, input: &[f64], in_len: usize) -> (Vec<f64>, LayerCache) {
        debug_assert_eq!(input.len(), self.in_channels * in_len);
        let out_len = self.out_len(in_len);
        let kdim = self.in_channels * self.kernel;
        let mut out = vec![0.0; self.out_channels * out_len];
        let cols = if self.transposed {
            // cols[(co*k + t), i] = sum_ci w[ci, co*k + t] * x[ci, i]
            let ck = self.out_channels * self.kernel;
            let mut cols = vec![0.0; ck * in_len];
            gemm(ck, self.in_channels, in_len, &self.weight, true, input, false, 0.0, &mut cols);
            col2im(&cols, self.out_channels, &mut out, out_len, self.taps(in_len));
            Vec::new()
        } else {
            let cols = im2col(input, self.in_channels, in_len, self.taps(out_len));
            gemm(self.out_channels, kdim, out_len, &self.weight, false, &cols, false, 0.0, &mut out);
            cols
        };
        for (row, &b) in out.chunks_exact_mut(out_len).zip(&self.bias) {
            for v in row.iter_mut() {
                *v += b;
                if self.relu && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        let cache = LayerCache {
            input: input.to_vec(),
            in_len,
            cols,
            output: if self.relu { out.clone() } else { Vec::new() },
        };
        (out, cache)
    }

    /// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
    /// gradient with respect to the layer input. `grad_out` is consumed as
    /// scratch space.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        mut grad_out: Vec<f64>,
        grad_w: &mut [f64],
        grad_b: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let in_len = cache.in_len;
        let out_len = self.out_len(in_len);
        if self.relu {
            for (g, &y) in grad_out.iter_mut().zip(&cache.output) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        for (row, gb) in grad_out.chunks_exact(out_len).zip(grad_b.iter_mut()) {
            *gb += row.iter().sum::<f64>();
        }
        let kdim = self.in_channels * self.kernel;
        if self.transposed {
            let ck = self.out_channels * self.kernel;
            let gcols = im2col(&grad_out, self.out_channels, out_len, self.taps(in_len));
            // dW[ci, co*k+t] += sum_i x[ci, i] * gcols[co*k+t, i]
            gemm(self.in_channels, in_len, ck, &cache.input, false, &gcols, true, 1.0, grad_w);
            if !need_input_grad {
                return Vec::new();
            }
            let mut grad_in = vec![0.0; self.in_channels * in_len];
            gemm(self.in_channels, ck, in_len, &self.weight, false, &gcols, false, 0.0, &mut grad_in);
            grad_in
        } else {
            // dW[co, ci*k+t] += sum_o g[co, o] * cols[ci*k+t, o]
            gemm(self.out_channels, out_len, kdim, &grad_out, false, &cache.cols, true, 1.0, grad_w);
            if !need_input_grad {
                return Vec::new();
            }
            let mut gcols = vec![0.0; kdim * out_len];
            gemm(kdim, self.out_channels, out_len, &self.weight, true, &grad_out, false, 0.0, &mut gcols);
            let mut grad_in = vec![0.0; self.in_channels * in_len];
            col2im(&gcols, self.in_channels, &mut grad_in, in_len, self.taps(out_len));
            grad_in
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(rng: &mut ChaCha8Rng, transposed: bool) -> ConvLayer {
        let (cin, cout, k, s) = (3, 2, 5, 2);
        let mut l = ConvLayer::zeros(cin, cout, k, s, 2, usize::from(transposed), transposed, false);
        l.weight.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        l
    }

    /// Direct definition of a strided, padded convolution.
    fn naive_conv(l: &ConvLayer, x: &[f64], len: usize) -> Vec<f64> {
        let out_len = l.out_len(len);
        let mut out = vec![0.0; l.out_channels * out_len];
        for co in 0..l.out_channels {
            for o in 0..out_len {
                let mut acc = l.bias[co];
                for ci in 0..l.in_channels {
                    for t in 0..l.kernel {
                        let pos = (o * l.stride + t) as isize - l.padding as isize;
                        if pos >= 0 && (pos as usize) < len {
                            acc += l.weight[(co * l.in_channels + ci) * l.kernel + t] * x[ci * len + pos as usize];
                        }
                    }
                }
                out[co * out_len + o] = acc;
            }
        }
        out
    }

    /// Direct definition of a transposed convolution as a scatter.
    fn naive_conv_t(l: &ConvLayer, x: &[f64], len: usize) -> Vec<f64> {
        let out_len = l.out_len(len);
        let mut out = vec![0.0; l.out_channels * out_len];
        for co in 0..l.out_channels {
            out[co * out_len..(co + 1) * out_len].iter_mut().for_each(|v| *v = l.bias[co]);
        }
        for ci in 0..l.in_channels {
            for i in 0..len {
                for co in 0..l.out_channels {
                    for t in 0..l.kernel {
                        let pos = (i * l.stride + t) as isize - l.padding as isize;
                        if pos >= 0 && (pos as usize) < out_len {
                            out[co * out_len + pos as usize] +=
                                l.weight[(ci * l.out_channels + co) * l.kernel + t] * x[ci * len + i];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_layer(&mut rng, false);
        let len = 16;
        let x: Vec<f64> = (0..l.in_channels * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = l.forward(&x, len);
        assert_eq!(l.out_len(len), 8);
        for (a, b) in y.iter().zip(naive_conv(&l, &x, len)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_t_matches_direct_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random_layer(&mut rng, true);
        let len = 8;
        let x: Vec<f64> = (0..l.in_channels * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (y, _) = l.forward(&x, len);
        assert_eq!(l.out_len(len), 16);
        for (a, b) in y.iter().zip(naive_conv_t(&l, &x, len)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <g, J x> == <J^T g, x> for the bias-free linear map.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for transposed in [false, true] {
            let mut l = random_layer(&mut rng, transposed);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
            let len = 12;
            let x: Vec<f64> = (0..l.in_channels * len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (y, cache) = l.forward(&x, len);
            let g: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs: f64 = g.iter().zip(&y).map(|(a, b)| a * b).sum();
            let mut gw = vec![0.0; l.weight.len()];
            let mut gb = vec![0.0; l.bias.len()];
            let gx = l.backward(&cache, g, &mut gw, &mut gb, true);
            let rhs: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "transposed={transposed}");
            // Also linear in the weights: <g, y> == <dW, W>.
            let rhs_w: f64 = gw.iter().zip(&l.weight).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-10, "transposed={transposed}");
        }
    }
}
