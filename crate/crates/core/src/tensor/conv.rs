//! 2D convolution over `(H, W, C)` images, cross-correlation orientation.
//!
//! The forward pass lowers each sample to an im2col matrix whose columns run
//! row-major over `(kh, kw, channel)` and multiplies it with the kernel bank.
//! Each output element is therefore reduced in one fixed order regardless of
//! how samples are scheduled across threads.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Symmetric zero padding of `P` pixels on every side.
    Explicit(usize),
    /// Padding chosen so that the output side is `ceil(N / S)`.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Stride-1 "same" convolution, the only flavour the models use.
    pub fn same(kernel_size: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_size,
            stride: 1,
            padding: Padding::Same,
            in_channels,
            out_channels,
        }
    }

    /// Resolves padding and output size for an `in_h x in_w` input.
    pub fn geometry(&self, in_h: usize, in_w: usize) -> Result<ConvGeometry> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel size and stride must be positive, got K={} S={}",
                self.kernel_size, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(
                "channel counts must be positive".into(),
            ));
        }
        let (out_h, pad_top) = self.axis("height", in_h)?;
        let (out_w, pad_left) = self.axis("width", in_w)?;
        Ok(ConvGeometry {
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top,
            pad_left,
            kernel: self.kernel_size,
            stride: self.stride,
            in_channels: self.in_channels,
            out_channels: self.out_channels,
        })
    }

    fn axis(&self, name: &str, n: usize) -> Result<(usize, usize)> {
        let (k, s) = (self.kernel_size, self.stride);
        match self.padding {
            Padding::Explicit(p) => {
                if n + 2 * p < k {
                    return Err(Error::DegenerateOutput {
                        context: "conv2d".into(),
                        detail: format!(
                            "{name}: (N + 2P - K) / S + 1 < 1 for N={n} K={k} P={p} S={s}"
                        ),
                    });
                }
                Ok(((n + 2 * p - k) / s + 1, p))
            }
            Padding::Same => {
                let out = n.div_ceil(s);
                let total = ((out - 1) * s + k).saturating_sub(n);
                Ok((out, total / 2))
            }
        }
    }
}

/// Fully resolved sizes for one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (iy < self.in_h && ix < self.in_w).then(|| (iy * self.in_w + ix) * self.in_channels)
    }

    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let c = self.in_channels;
        let patch = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &mut cols[(oy * self.out_w + ox) * patch..][..patch];
                let mut off = 0;
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        let dst = &mut row[off..off + c];
                        match self.source(oy, ox, ky, kx) {
                            Some(src) => dst.copy_from_slice(&x[src..src + c]),
                            None => dst.fill(T::zero()),
                        }
                        off += c;
                    }
                }
            }
        }
    }

    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let c = self.in_channels;
        let patch = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &cols[(oy * self.out_w + ox) * patch..][..patch];
                let mut off = 0;
                for ky in 0..self.kernel {
                    for kx in 0..self.kernel {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            for (d, &g) in dx[src..src + c].iter_mut().zip(&row[off..off + c]) {
                                *d = *d + g;
                            }
                        }
                        off += c;
                    }
                }
            }
        }
    }
}

struct Batched {
    batch: usize,
    batched: bool,
    geom: ConvGeometry,
}

fn validate<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Batched> {
    let (batch, batched, dims) = match input.shape() {
        [h, w, c] => (1, false, [*h, *w, *c]),
        [b, h, w, c] => (*b, true, [*h, *w, *c]),
        other => {
            return Err(Error::shape(
                "conv2d",
                format!("input must be (H, W, C) or (B, H, W, C), got {other:?}"),
            ))
        }
    };
    if dims[2] != spec.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input channels: input has {} but spec expects {}",
                dims[2], spec.in_channels
            ),
        ));
    }
    let want = [
        spec.kernel_size,
        spec.kernel_size,
        spec.in_channels,
        spec.out_channels,
    ];
    if kernels.shape() != want {
        let names = ["kernel height", "kernel width", "kernel in_channels", "kernel out_channels"];
        let detail = match kernels.shape() {
            got if got.len() == 4 => {
                let axis = (0..4).find(|&i| got[i] != want[i]).unwrap_or(0);
                format!("{}: got {} expected {}", names[axis], got[axis], want[axis])
            }
            got => format!("kernel bank must be rank 4 {want:?}, got {got:?}"),
        };
        return Err(Error::shape("conv2d", detail));
    }
    let geom = spec.geometry(dims[0], dims[1])?;
    Ok(Batched {
        batch,
        batched,
        geom,
    })
}

/// Convolves `input` (`(H, W, Nc)` or batched `(B, H, W, Nc)`) with a
/// `(K, K, Nc, Nk)` kernel bank and adds the per-filter bias.
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let Batched {
        batch,
        batched,
        geom,
    } = validate(input, kernels, spec)?;
    if bias.shape() != [spec.out_channels] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "bias length: got {:?} expected [{}]",
                bias.shape(),
                spec.out_channels
            ),
        ));
    }
    let in_len = geom.in_h * geom.in_w * geom.in_channels;
    let out_len = geom.out_pixels() * geom.out_channels;
    let mut out = vec![T::zero(); batch * out_len];
    let (patch, pixels, cout) = (geom.patch_len(), geom.out_pixels(), geom.out_channels);
    let weights = kernels.data();
    let b = bias.data();

    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(o, x)| {
            if geom.is_pointwise() {
                T::gemm(pixels, patch, cout, x, false, weights, false, T::zero(), o);
            } else {
                let mut cols = vec![T::zero(); pixels * patch];
                geom.im2col(x, &mut cols);
                T::gemm(pixels, patch, cout, &cols, false, weights, false, T::zero(), o);
            }
            for px in o.chunks_exact_mut(cout) {
                for (v, &bb) in px.iter_mut().zip(b) {
                    *v = *v + bb;
                }
            }
        });

    let shape = if batched {
        vec![batch, geom.out_h, geom.out_w, cout]
    } else {
        vec![geom.out_h, geom.out_w, cout]
    };
    Ok(Tensor::from_parts(shape, out))
}

/// Gradients of a convolution with respect to its operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Backward pass of [`conv2d`]. `grad_output` has the forward output's
/// shape. Per-sample kernel gradients are summed in sample order.
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_output: &Tensor<T>,
    spec: &ConvSpec,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let Batched { batch, geom, .. } = validate(input, kernels, spec)?;
    let in_len = geom.in_h * geom.in_w * geom.in_channels;
    let out_len = geom.out_pixels() * geom.out_channels;
    if grad_output.len() != batch * out_len {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_output has {} elements, forward output has {}",
                grad_output.len(),
                batch * out_len
            ),
        ));
    }
    let (patch, pixels, cout) = (geom.patch_len(), geom.out_pixels(), geom.out_channels);
    let weights = kernels.data();

    let partials: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = input
        .data()
        .par_chunks(in_len)
        .zip(grad_output.data().par_chunks(out_len))
        .map(|(x, dy)| {
            let owned;
            let cols: &[T] = if geom.is_pointwise() {
                x
            } else {
                let mut c = vec![T::zero(); pixels * patch];
                geom.im2col(x, &mut c);
                owned = c;
                &owned
            };
            let mut dw = vec![T::zero(); patch * cout];
            T::gemm(patch, pixels, cout, cols, true, dy, false, T::zero(), &mut dw);
            let mut db = vec![T::zero(); cout];
            for px in dy.chunks_exact(cout) {
                for (acc, &g) in db.iter_mut().zip(px) {
                    *acc = *acc + g;
                }
            }
            let dx = need_input_grad.then(|| {
                let mut dcols = vec![T::zero(); pixels * patch];
                T::gemm(pixels, cout, patch, dy, false, weights, true, T::zero(), &mut dcols);
                if geom.is_pointwise() {
                    dcols
                } else {
                    let mut dx = vec![T::zero(); in_len];
                    geom.col2im(&dcols, &mut dx);
                    dx
                }
            });
            (dw, db, dx)
        })
        .collect();

    let mut dw = vec![T::zero(); patch * cout];
    let mut db = vec![T::zero(); cout];
    let mut dx = need_input_grad.then(|| Vec::with_capacity(batch * in_len));
    for (pw, pb, px) in partials {
        for (a, b) in dw.iter_mut().zip(pw) {
            *a = *a + b;
        }
        for (a, b) in db.iter_mut().zip(pb) {
            *a = *a + b;
        }
        if let (Some(acc), Some(px)) = (dx.as_mut(), px) {
            acc.extend(px);
        }
    }

    Ok(ConvGrads {
        input: dx.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        kernels: Tensor::from_parts(kernels.shape().to_vec(), dw),
        bias: Tensor::from_parts(vec![cout], db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct summation, written independently of the im2col path.
    fn oracle(
        x: &[f64],
        (h, w, c): (usize, usize, usize),
        k: &[f64],
        bias: &[f64],
        (ks, s, p, nk): (usize, usize, usize, usize),
    ) -> (usize, usize, Vec<f64>) {
        let oh = (h + 2 * p - ks) / s + 1;
        let ow = (w + 2 * p - ks) / s + 1;
        let mut out = vec![0.0; oh * ow * nk];
        for m in 0..oh {
            for n in 0..ow {
                for f in 0..nk {
                    let mut acc = bias[f];
                    for i in 0..ks {
                        for j in 0..ks {
                            let yy = (m * s + i) as isize - p as isize;
                            let xx = (n * s + j) as isize - p as isize;
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            for ch in 0..c {
                                let xi = ((yy as usize * w) + xx as usize) * c + ch;
                                let ki = ((i * ks + j) * c + ch) * nk + f;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[(m * ow + n) * nk + f] = acc;
                }
            }
        }
        (oh, ow, out)
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
    }

    #[test]
    fn same_padding_keeps_64x64() {
        let spec = ConvSpec::same(3, 32, 32);
        let g = spec.geometry(64, 64).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (64, 64, 1));
        let x = Tensor::<f32>::zeros([64, 64, 32]).unwrap();
        let k = Tensor::zeros([3, 3, 32, 32]).unwrap();
        let b = Tensor::zeros([32]).unwrap();
        assert_eq!(conv2d(&x, &k, &b, &spec).unwrap().shape(), [64, 64, 32]);
    }

    #[test]
    fn same_padding_with_stride_uses_ceil() {
        let spec = ConvSpec {
            stride: 2,
            ..ConvSpec::same(3, 1, 1)
        };
        let g = spec.geometry(7, 8).unwrap();
        assert_eq!((g.out_h, g.out_w), (4, 4));
    }

    #[test]
    fn identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::new([5, 7, 1], random(&mut rng, 35)).unwrap();
        let k = Tensor::full([1, 1, 1, 1], 1.0).unwrap();
        let b = Tensor::zeros([1]).unwrap();
        let spec = ConvSpec {
            padding: Padding::Explicit(0),
            ..ConvSpec::same(1, 1, 1)
        };
        assert_eq!(conv2d(&x, &k, &b, &spec).unwrap(), x);
    }

    #[test]
    fn matches_direct_summation_8x8x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&mut rng, 8 * 8 * 3);
        let k = random(&mut rng, 3 * 3 * 3 * 4);
        let b = random(&mut rng, 4);
        let spec = ConvSpec {
            padding: Padding::Explicit(1),
            ..ConvSpec::same(3, 3, 4)
        };
        let got = conv2d(
            &Tensor::new([8, 8, 3], x.clone()).unwrap(),
            &Tensor::new([3, 3, 3, 4], k.clone()).unwrap(),
            &Tensor::new([4], b.clone()).unwrap(),
            &spec,
        )
        .unwrap();
        let up = |v: &[f32]| v.iter().map(|&a| a as f64).collect::<Vec<_>>();
        let (oh, ow, want) = oracle(&up(&x), (8, 8, 3), &up(&k), &up(&b), (3, 1, 1, 4));
        assert_eq!(got.shape(), [oh, ow, 4]);
        for (g, w) in got.data().iter().zip(&want) {
            let rel = (*g as f64 - w).abs() / w.abs().max(1.0);
            assert!(rel < 1e-5, "{g} vs {w}");
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let x = Tensor::<f32>::zeros([4, 4, 2]).unwrap();
        let k = Tensor::zeros([3, 3, 3, 1]).unwrap();
        let b = Tensor::zeros([1]).unwrap();
        let err = conv2d(&x, &k, &b, &ConvSpec::same(3, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let x = Tensor::<f32>::zeros([4, 4, 3]).unwrap();
        let k = Tensor::zeros([3, 3, 3, 2]).unwrap();
        let err = conv2d(&x, &k, &b, &ConvSpec::same(3, 3, 1)).unwrap_err();
        assert!(err.to_string().contains("kernel out_channels"), "{err}");
    }

    #[test]
    fn degenerate_output_rejected() {
        let spec = ConvSpec {
            padding: Padding::Explicit(0),
            ..ConvSpec::same(5, 1, 1)
        };
        assert!(matches!(
            spec.geometry(3, 3),
            Err(Error::DegenerateOutput { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = |n| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let spec = ConvSpec {
            stride: 2,
            padding: Padding::Explicit(1),
            ..ConvSpec::same(3, 2, 3)
        };
        let x = Tensor::new([2, 5, 5, 2], r(100)).unwrap();
        let k = Tensor::new([3, 3, 2, 3], r(54)).unwrap();
        let b = Tensor::new([3], r(3)).unwrap();
        let y = conv2d(&x, &k, &b, &spec).unwrap();
        let dy = Tensor::new(y.shape().to_vec(), r(y.len())).unwrap();
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = conv2d(x, k, b, &spec).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
        };
        let grads = conv2d_backward(&x, &k, &dy, &spec, true).unwrap();
        let h = 1e-6;
        let check = |analytic: &[f64], perturb: &dyn Fn(usize, f64) -> f64| {
            for (i, &a) in analytic.iter().enumerate() {
                let num = (perturb(i, h) - perturb(i, -h)) / (2.0 * h);
                assert!((a - num).abs() < 1e-6 * a.abs().max(1.0), "{i}: {a} vs {num}");
            }
        };
        check(grads.input.as_ref().unwrap().data(), &|i, d| {
            let mut x2 = x.clone();
            x2.data_mut()[i] += d;
            loss(&x2, &k, &b)
        });
        check(grads.kernels.data(), &|i, d| {
            let mut k2 = k.clone();
            k2.data_mut()[i] += d;
            loss(&x, &k2, &b)
        });
        check(grads.bias.data(), &|i, d| {
            let mut b2 = b.clone();
            b2.data_mut()[i] += d;
            loss(&x, &k, &b2)
        });
    }

    proptest! {
        #[test]
        fn output_size_law(n in 1usize..40, k in 1usize..7, p in 0usize..4, s in 1usize..5) {
            prop_assume!(n + 2 * p >= k);
            let spec = ConvSpec { kernel_size: k, stride: s, padding: Padding::Explicit(p), in_channels: 1, out_channels: 1 };
            let g = spec.geometry(n, n).unwrap();
            prop_assert_eq!(g.out_h, (n + 2 * p - k) / s + 1);
            prop_assert_eq!(g.out_w, g.out_h);
        }

        #[test]
        fn linear_in_input(seed in 0u64..1000, alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::new([6, 6, 2], random(&mut rng, 72)).unwrap();
            let b = Tensor::new([6, 6, 2], random(&mut rng, 72)).unwrap();
            let k = Tensor::new([3, 3, 2, 3], random(&mut rng, 54)).unwrap();
            let zero = Tensor::zeros([3]).unwrap();
            let spec = ConvSpec::same(3, 2, 3);
            let mixed = a.zip_map(&b, |x, y| alpha * x + beta * y).unwrap();
            let lhs = conv2d(&mixed, &k, &zero, &spec).unwrap();
            let ca = conv2d(&a, &k, &zero, &spec).unwrap();
            let cb = conv2d(&b, &k, &zero, &spec).unwrap();
            let scale = lhs.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
            for ((l, x), y) in lhs.data().iter().zip(ca.data()).zip(cb.data()) {
                prop_assert!((l - (alpha * x + beta * y)).abs() <= 1e-5 * scale);
            }
        }
    }
}
