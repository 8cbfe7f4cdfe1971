//! Per-layer forward and backward kernels used by the graph executor.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
}

#[inline]
pub(crate) fn sigmoid<T: Element>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Elementwise ReLU or logistic sigmoid.
pub fn activation<T: Element>(x: &Tensor<T>, kind: ActivationKind) -> Tensor<T> {
    match kind {
        ActivationKind::Relu => x.map(|v| v.max(T::zero())),
        ActivationKind::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient through an activation, expressed in terms of its output `y`.
pub(crate) fn activation_backward<T: Element>(
    y: &Tensor<T>,
    dy: &Tensor<T>,
    kind: ActivationKind,
) -> Result<Tensor<T>> {
    match kind {
        ActivationKind::Relu => y.zip_map(dy, |y, g| if y > T::zero() { g } else { T::zero() }),
        ActivationKind::Sigmoid => y.zip_map(dy, |y, g| g * y * (T::one() - y)),
    }
}

/// Inverted-dropout keep mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub(crate) fn dropout_mask<T: Element, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )))
    }
}

/// Inverted dropout. Identity in infer mode or when `rate == 0`.
pub fn dropout<T: Element, R: Rng + ?Sized>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_dropout_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<T, R>(x.len(), rate, rng);
    Ok(Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dLayer<T = f32> {
    pub spec: ConvSpec,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T = f32> {
    /// `(in, out)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> DenseLayer<T> {
    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[1]
    }

    pub(crate) fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n_in, n_out) = (self.inputs(), self.units());
        let [batch, width] = *x.shape() else {
            return Err(Error::shape("dense", format!("expected (B, {n_in}), got {:?}", x.shape())));
        };
        if width != n_in {
            return Err(Error::shape("dense", format!("input width {width}, layer expects {n_in}")));
        }
        let mut out = Vec::with_capacity(batch * n_out);
        for _ in 0..batch {
            out.extend_from_slice(self.bias.data());
        }
        T::gemm(batch, n_in, n_out, x.data(), false, self.weight.data(), false, T::one(), &mut out);
        Ok(Tensor::from_parts(vec![batch, n_out], out))
    }

    /// Returns `(dx, dW, db)`.
    pub(crate) fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (n_in, n_out) = (self.inputs(), self.units());
        let batch = x.shape()[0];
        let mut dw = vec![T::zero(); n_in * n_out];
        T::gemm(n_in, batch, n_out, x.data(), true, dy.data(), false, T::zero(), &mut dw);
        let mut db = vec![T::zero(); n_out];
        for row in dy.data().chunks_exact(n_out) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a = *a + g;
            }
        }
        let mut dx = vec![T::zero(); batch * n_in];
        T::gemm(batch, n_out, n_in, dy.data(), false, self.weight.data(), true, T::zero(), &mut dx);
        (
            Tensor::from_parts(vec![batch, n_in], dx),
            Tensor::from_parts(vec![n_in, n_out], dw),
            Tensor::from_parts(vec![n_out], db),
        )
    }
}

/// Learned affine parameters and running statistics of one batch-norm layer.
/// Statistics are per channel, where the channel is the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if epsilon <= 0.0 || !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "batch norm needs epsilon > 0 and momentum in [0, 1), got {epsilon}, {momentum}"
            )));
        }
        Ok(Self {
            gamma: Tensor::full([channels], T::one())?,
            beta: Tensor::zeros([channels])?,
            moving_mean: Tensor::zeros([channels])?,
            moving_var: Tensor::full([channels], T::one())?,
            epsilon,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn apply_batch_stats(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (mm, &bm) in self.moving_mean.data_mut().iter_mut().zip(&stats.mean) {
            *mm = T::of(m * mm.as_f64() + (1.0 - m) * bm);
        }
        for (mv, &bv) in self.moving_var.data_mut().iter_mut().zip(&stats.var) {
            *mv = T::of(m * mv.as_f64() + (1.0 - m) * bv);
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let c = self.channels();
        if x.rank() < 2 || x.shape()[x.rank() - 1] != c {
            return Err(Error::shape(
                "batch_norm",
                format!("expected (B, ..., {c}), got {:?}", x.shape()),
            ));
        }
        Ok(c)
    }
}

/// Mini-batch mean and biased variance, per channel.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn batchnorm_train<T: Element>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchStats)> {
    let c = state.check_input(x)?;
    if x.shape()[0] < 2 {
        return Err(Error::InvalidArgument(
            "batch norm in train mode needs a batch of at least 2".into(),
        ));
    }
    let count = (x.len() / c) as f64;
    let mut mean = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(px) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0f64; c];
    for px in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(px).zip(&mean) {
            let d = v.as_f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();

    let gamma = state.gamma.data();
    let beta = state.beta.data();
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for px in x.data().chunks_exact(c) {
        for ch in 0..c {
            let h = (px[ch].as_f64() - mean[ch]) * inv_std[ch];
            let h_t = T::of(h);
            xhat.push(h_t);
            y.push(gamma[ch] * h_t + beta[ch]);
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::from_parts(shape.clone(), y),
        BatchNormCache {
            xhat: Tensor::from_parts(shape, xhat),
            inv_std,
        },
        BatchStats { mean, var },
    ))
}

pub(crate) fn batchnorm_infer<T: Element>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
) -> Result<Tensor<T>> {
    let c = state.check_input(x)?;
    let scale: Vec<T> = (0..c)
        .map(|ch| {
            T::of(
                state.gamma.data()[ch].as_f64()
                    / (state.moving_var.data()[ch].as_f64() + state.epsilon).sqrt(),
            )
        })
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| state.beta.data()[ch] - scale[ch] * state.moving_mean.data()[ch])
        .collect();
    let mut y = Vec::with_capacity(x.len());
    for px in x.data().chunks_exact(c) {
        for ch in 0..c {
            y.push(px[ch] * scale[ch] + shift[ch]);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), y))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward<T: Element>(
    dy: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let count = (dy.len() / c) as f64;
    let mut dbeta = vec![0.0f64; c];
    let mut dgamma = vec![0.0f64; c];
    for (g, h) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            let gv = g[ch].as_f64();
            dbeta[ch] += gv;
            dgamma[ch] += gv * h[ch].as_f64();
        }
    }
    let coef: Vec<f64> = (0..c)
        .map(|ch| gamma.data()[ch].as_f64() * cache.inv_std[ch])
        .collect();
    let mut dx = Vec::with_capacity(dy.len());
    for (g, h) in dy.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for ch in 0..c {
            let v = coef[ch]
                * (g[ch].as_f64() - dbeta[ch] / count - h[ch].as_f64() * dgamma[ch] / count);
            dx.push(T::of(v));
        }
    }
    let to_t = |v: Vec<f64>| Tensor::from_parts(vec![c], v.into_iter().map(T::of).collect());
    (
        Tensor::from_parts(dy.shape().to_vec(), dx),
        to_t(dgamma),
        to_t(dbeta),
    )
}

/// Batch normalization. Train mode normalizes with the mini-batch
/// statistics and folds them into the moving averages; infer mode uses
/// the moving averages only.
pub fn batchnorm_forward<T: Element>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    match mode {
        Mode::Train => {
            let (y, _, stats) = batchnorm_train(x, state)?;
            state.apply_batch_stats(&stats);
            Ok(y)
        }
        Mode::Infer => batchnorm_infer(x, state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(seed: u64, shape: [usize; 4]) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |i| {
            // give each channel its own offset and spread
            let ch = (i % shape[3]) as f32;
            3.0 * ch - 2.0 + (1.0 + ch) * rng.random_range(-1.0f32..1.0)
        })
        .unwrap()
    }

    fn channel_moments(y: &Tensor<f32>, c: usize) -> Vec<(f64, f64)> {
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = y.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let x = Tensor::new([4], vec![-3.5f32, 2.0, 0.0, -0.0]).unwrap();
        assert_eq!(activation(&x, ActivationKind::Relu).data(), &[0.0, 2.0, 0.0, 0.0]);
        let s = activation(&Tensor::new([1], vec![0.0f32]).unwrap(), ActivationKind::Sigmoid);
        assert_eq!(s.data()[0], 0.5);
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-30.0..30.0);
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
            let s = sigmoid(x as f32);
            assert!(s >= 0.0 && s <= 1.0);
        }
    }

    #[test]
    fn bn_train_normalizes() {
        let x = random_batch(1, [8, 5, 5, 3]);
        let mut st = BatchNormState::<f32>::new(3, 1e-3, 0.99).unwrap();
        let y = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        let raw = channel_moments(&x, 3);
        for ((m, v), (_, rv)) in channel_moments(&y, 3).into_iter().zip(raw) {
            assert!(m.abs() < 1e-5, "mean {m}");
            // epsilon shrinks the variance to var / (var + eps)
            assert!((v - rv / (rv + 1e-3)).abs() < 1e-5, "var {v}");
        }
    }

    #[test]
    fn bn_inverse_transform() {
        let x = random_batch(2, [6, 3, 3, 2]);
        let mut st = BatchNormState::<f32>::new(2, 1e-3, 0.99).unwrap();
        let (_, _, stats) = batchnorm_train(&x, &st).unwrap();
        for ch in 0..2 {
            st.gamma.data_mut()[ch] = (stats.var[ch] + st.epsilon).sqrt() as f32;
            st.beta.data_mut()[ch] = stats.mean[ch] as f32;
        }
        let y = batchnorm_forward(&x, &mut st, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn bn_matches_two_pass_oracle() {
        let x = random_batch(3, [4, 2, 3, 3]);
        let st = BatchNormState::<f32>::new(3, 1e-3, 0.99).unwrap();
        let (y, _, stats) = batchnorm_train(&x, &st).unwrap();
        let c = 3;
        for ch in 0..c {
            let vals: Vec<f64> = x.data().iter().skip(ch).step_by(c).map(|&v| v as f64).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((stats.mean[ch] - mean).abs() < 1e-9);
            assert!((stats.var[ch] - var).abs() < 1e-9);
            for (i, v) in vals.iter().enumerate() {
                let want = (v - mean) / (var + 1e-3).sqrt();
                assert!((y.data()[i * c + ch] as f64 - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn bn_train_rejects_single_sample() {
        let x = Tensor::<f32>::zeros([1, 2, 2, 3]).unwrap();
        let mut st = BatchNormState::new(3, 1e-3, 0.99).unwrap();
        assert!(batchnorm_forward(&x, &mut st, Mode::Train).is_err());
        assert!(batchnorm_forward(&x, &mut st, Mode::Infer).is_ok());
    }

    #[test]
    fn bn_moving_stats_update() {
        let x = random_batch(5, [4, 2, 2, 2]);
        let mut st = BatchNormState::<f64>::new(2, 1e-3, 0.9).unwrap();
        let x64 = x.cast::<f64>();
        let (_, _, stats) = batchnorm_train(&x64, &st).unwrap();
        batchnorm_forward(&x64, &mut st, Mode::Train).unwrap();
        for ch in 0..2 {
            assert!((st.moving_mean.data()[ch] - 0.1 * stats.mean[ch]).abs() < 1e-12);
            assert!((st.moving_var.data()[ch] - (0.9 + 0.1 * stats.var[ch])).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_fn([100], |i| i as f32).unwrap();
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap(), x);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let x = Tensor::full([n], 1.0f64).unwrap();
        let y = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
        let mean = y.data().iter().sum::<f64>() / n as f64;
        assert!((survivors - 0.5).abs() < 0.01, "{survivors}");
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
