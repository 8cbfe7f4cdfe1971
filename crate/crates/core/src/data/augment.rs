use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

use super::Sample;

/// Ranges for random geometric and photometric perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Rotation is drawn from `[-rot_max_deg, rot_max_deg]`.
    pub rot_max_deg: f64,
    /// Shift per axis as a fraction of that axis' length.
    pub shift_frac: f64,
    /// Zoom factor is drawn from `[1 - zoom_frac, 1 + zoom_frac]`.
    pub zoom_frac: f64,
    /// Intensity scale is drawn from `[1 - intensity_frac, 1 + intensity_frac]`.
    pub intensity_frac: f64,
    pub h_flip: bool,
    pub v_flip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rot_max_deg: 25.0,
            shift_frac: 0.10,
            zoom_frac: 0.20,
            intensity_frac: 0.20,
            h_flip: true,
            v_flip: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All ranges zero and flips off.
    pub fn identity(seed: u64) -> Self {
        Self {
            rot_max_deg: 0.0,
            shift_frac: 0.0,
            zoom_frac: 0.0,
            intensity_frac: 0.0,
            h_flip: false,
            v_flip: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..360.0).contains(&self.rot_max_deg) {
            return Err(Error::Config(format!("rotation must be in [0, 360), got {}", self.rot_max_deg)));
        }
        for (name, v) in [
            ("shift", self.shift_frac),
            ("zoom", self.zoom_frac),
            ("intensity", self.intensity_frac),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} fraction must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// One concrete draw from an [`AugmentConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    /// Shifts as fractions of width and height; positive moves content
    /// right and down.
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom: f64,
    pub intensity: f64,
    pub h_flip: bool,
    pub v_flip: bool,
}

fn symmetric(rng: &mut impl Rng, half: f64) -> f64 {
    if half == 0.0 {
        0.0
    } else {
        rng.random_range(-half..=half)
    }
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom: 1.0,
            intensity: 1.0,
            h_flip: false,
            v_flip: false,
        }
    }

    /// Draws every parameter in a fixed order, so disabled ranges do not
    /// shift the random stream for the others.
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let rotation_deg = symmetric(rng, cfg.rot_max_deg);
        let shift_x = symmetric(rng, cfg.shift_frac);
        let shift_y = symmetric(rng, cfg.shift_frac);
        let zoom = 1.0 + symmetric(rng, cfg.zoom_frac);
        let intensity = 1.0 + symmetric(rng, cfg.intensity_frac);
        let h_flip = rng.random_bool(0.5) && cfg.h_flip;
        let v_flip = rng.random_bool(0.5) && cfg.v_flip;
        Self { rotation_deg, shift_x, shift_y, zoom, intensity, h_flip, v_flip }
    }

    /// Applies rotation, shift, zoom, intensity scaling, then flips to an
    /// `(H, W, C)` image. The three geometric steps are composed into one
    /// inverse map and resampled once, bilinearly, with edge replication.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let &[h, w, c] = image.shape() else {
            return Err(Error::shape("augment", format!("expected (H, W, C), got {:?}", image.shape())));
        };
        let src = image.data();
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let (tx, ty) = (self.shift_x * w as f64, self.shift_y * h as f64);
        let mut out = vec![0f32; src.len()];
        for oy in 0..h {
            for ox in 0..w {
                // output = zoom * (R * p + t), inverted
                let ux = (ox as f64 - cx) / self.zoom - tx;
                let uy = (oy as f64 - cy) / self.zoom - ty;
                let sx = (cos * ux + sin * uy + cx).clamp(0.0, (w - 1) as f64);
                let sy = (-sin * ux + cos * uy + cy).clamp(0.0, (h - 1) as f64);
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                let dst = &mut out[(oy * w + ox) * c..][..c];
                for (ch, d) in dst.iter_mut().enumerate() {
                    let at = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                    let v = (top * (1.0 - fy) + bot * fy) * self.intensity;
                    *d = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        let mut t = Tensor::new([h, w, c], out)?;
        if self.h_flip {
            t = flip(&t, true);
        }
        if self.v_flip {
            t = flip(&t, false);
        }
        Ok(t)
    }
}

fn flip(t: &Tensor, horizontal: bool) -> Tensor {
    let &[h, w, c] = t.shape() else { unreachable!() };
    let src = t.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
            out.extend_from_slice(&src[(sy * w + sx) * c..][..c]);
        }
    }
    Tensor::from_parts(vec![h, w, c], out)
}

/// Seed for augmenting sample `index` in `epoch`; independent of iteration
/// order and worker count.
pub fn augment_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed::derive(seed, &[0xa0_9e, epoch as u64, index as u64])
}

/// Random perturbation of an image.
pub fn augment_image(image: &Tensor, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor> {
    AugmentParams::sample(cfg, rng).apply(image)
}

/// Random perturbation of a sample; the label and source are kept.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Sample> {
    Ok(Sample {
        image: augment_image(&sample.image, cfg, rng)?,
        label: sample.label,
        source_id: format!("{}#aug", sample.source_id),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([h, w, 3], |_| rng.random::<f32>()).unwrap()
    }

    #[test]
    fn identity_config_is_identity() {
        let x = img(16, 12, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = augment_image(&x, &AugmentConfig::identity(0), &mut rng).unwrap();
        let dev = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(dev < 1e-6);
    }

    #[test]
    fn double_flip_is_exact() {
        let x = img(7, 9, 2);
        for (h, v) in [(true, false), (false, true), (true, true)] {
            let p = AugmentParams { h_flip: h, v_flip: v, ..AugmentParams::identity() };
            assert_eq!(p.apply(&p.apply(&x).unwrap()).unwrap(), x);
        }
    }

    #[test]
    fn horizontal_flip_mirrors_columns() {
        let x = Tensor::from_fn([1, 3, 1], |i| i as f32 / 2.0).unwrap();
        let p = AugmentParams { h_flip: true, ..AugmentParams::identity() };
        assert_eq!(p.apply(&x).unwrap().data(), [1.0, 0.5, 0.0]);
    }

    #[test]
    fn intensity_clamps() {
        let x = Tensor::full([2, 2, 3], 0.9).unwrap();
        let p = AugmentParams { intensity: 1.2, ..AugmentParams::identity() };
        assert!(p.apply(&x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn whole_pixel_shift_moves_content() {
        let x = Tensor::from_fn([1, 10, 1], |i| i as f32 / 10.0).unwrap();
        let p = AugmentParams { shift_x: 0.2, ..AugmentParams::identity() };
        let y = p.apply(&x).unwrap();
        // content moves right two pixels, the left edge replicates
        let want = [0.0, 0.0, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_on_square() {
        let x = img(5, 5, 3);
        let p = AugmentParams { rotation_deg: 90.0, ..AugmentParams::identity() };
        let y = p.apply(&x).unwrap();
        let four = (0..3).try_fold(y.clone(), |t, _| p.apply(&t)).unwrap();
        for (a, b) in four.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_ne!(y, x);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        assert!(AugmentConfig { zoom_frac: 1.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { rot_max_deg: 360.0, ..Default::default() }.validate().is_err());
        assert!(AugmentConfig { shift_frac: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn seeds_are_per_sample_and_epoch() {
        assert_ne!(augment_seed(1, 0, 0), augment_seed(1, 0, 1));
        assert_ne!(augment_seed(1, 0, 0), augment_seed(1, 1, 0));
        assert_eq!(augment_seed(1, 3, 4), augment_seed(1, 3, 4));
    }

    proptest! {
        #[test]
        fn outputs_stay_in_range(seed in any::<u64>(), h in 2usize..12, w in 2usize..12) {
            let x = img(h, w, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Sample { image: x, label: super::super::Label::Cracked, source_id: "s".into() };
            let y = augment(&s, &AugmentConfig::default(), &mut rng).unwrap();
            prop_assert_eq!(y.label, s.label);
            prop_assert_eq!(y.image.shape(), s.image.shape());
            prop_assert!(y.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn sampled_params_respect_bounds(seed in any::<u64>()) {
            let cfg = AugmentConfig::default();
            let p = AugmentParams::sample(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(p.rotation_deg.abs() <= 25.0);
            prop_assert!(p.shift_x.abs() <= 0.1 && p.shift_y.abs() <= 0.1);
            prop_assert!((0.8..=1.2).contains(&p.zoom));
            prop_assert!((0.8..=1.2).contains(&p.intensity));
        }
    }
}
