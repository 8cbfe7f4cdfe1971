use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

use super::{Label, Sample};

/// Stratified split. Each class with `n` samples sends
/// `clamp(round(val_frac * n), 1, n - 1)` of them to validation, chosen by a
/// seeded shuffle. Both outputs keep the input order.
pub fn split_train_val(samples: Vec<Sample>, val_frac: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..1.0).contains(&val_frac) || val_frac == 0.0 {
        return Err(Error::Config(format!("validation fraction must be in (0, 1), got {val_frac}")));
    }
    let mut to_val = vec![false; samples.len()];
    for label in [Label::Cracked, Label::NonCracked] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        let n = idx.len();
        if n < 2 {
            return Err(Error::Dataset(format!(
                "class `{}` has {n} sample(s); at least 2 are needed to stratify",
                label.dir()
            )));
        }
        let n_val = ((val_frac * n as f64).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut seed::rng(seed, &[0x5b17, label as u64]));
        for &i in &idx[..n_val] {
            to_val[i] = true;
        }
    }
    let (val, train): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .zip(to_val)
        .partition(|(_, v)| *v);
    Ok((train.into_iter().map(|(s, _)| s).collect(), val.into_iter().map(|(s, _)| s).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn corpus(nc: usize, nn: usize) -> Vec<Sample> {
        (0..nc + nn)
            .map(|i| Sample {
                image: Tensor::full([1, 1, 3], 0.0).unwrap(),
                label: if i < nc { Label::Cracked } else { Label::NonCracked },
                source_id: format!("s{i}"),
            })
            .collect()
    }

    fn count(v: &[Sample], l: Label) -> usize {
        v.iter().filter(|s| s.label == l).count()
    }

    #[test]
    fn exact_stratification() {
        let (train, val) = split_train_val(corpus(100, 100), 0.1, 3).unwrap();
        assert_eq!((count(&val, Label::Cracked), count(&val, Label::NonCracked)), (10, 10));
        assert_eq!(train.len(), 180);
    }

    #[test]
    fn deterministic() {
        let a = split_train_val(corpus(30, 20), 0.1, 9).unwrap();
        let b = split_train_val(corpus(30, 20), 0.1, 9).unwrap();
        assert_eq!(a, b);
        let c = split_train_val(corpus(30, 20), 0.1, 10).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn small_classes() {
        let (_, val) = split_train_val(corpus(3, 2), 0.1, 0).unwrap();
        assert_eq!((count(&val, Label::Cracked), count(&val, Label::NonCracked)), (1, 1));
        assert!(split_train_val(corpus(1, 5), 0.1, 0).is_err());
        assert!(split_train_val(corpus(5, 5), 0.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_fraction(nc in 2usize..60, nn in 2usize..60, frac in 0.01f64..0.9, seed in any::<u64>()) {
            let (train, val) = split_train_val(corpus(nc, nn), frac, seed).unwrap();
            let mut ids: Vec<String> = train.iter().chain(&val).map(|s| s.source_id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), nc + nn);
            prop_assert_eq!(train.len() + val.len(), nc + nn);
            for (l, n) in [(Label::Cracked, nc), (Label::NonCracked, nn)] {
                let v = count(&val, l) as f64;
                prop_assert!((v - frac * n as f64).abs() <= 1.0);
                prop_assert!(count(&train, l) >= 1);
            }
        }
    }
}
