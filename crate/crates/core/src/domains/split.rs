use rand::seq::SliceRandom;

use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Result};

/// Class-stratified train/validation/test partition.
///
/// Within each class the indices are shuffled with the seeded stream, then cut
/// into `round(train_frac * n_c)` and `round(val_frac * n_c)` leading parts; every
/// part keeps at least one instance of the class. Each part preserves the
/// original row order.
pub fn split(
    d: &DomainDataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset, DomainDataset)> {
    let in_unit = |f: f64| f > 0.0 && f < 1.0;
    if !in_unit(train_frac) || !in_unit(val_frac) || train_frac + val_frac >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "fractions {train_frac}/{val_frac} must lie in (0,1) with sum < 1"
        )));
    }
    let mut rng = rng::stream(seed, streams::SPLIT);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..d.num_classes() {
        let mut idx: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        if n < 3 {
            return Err(Error::InvalidArgument(format!(
                "class {class} of domain {} has {n} instances; stratified split needs 3",
                d.domain_id()
            )));
        }
        idx.shuffle(&mut rng);
        let mut n_train = ((train_frac * n as f64).round() as usize).max(1);
        let mut n_val = ((val_frac * n as f64).round() as usize).max(1);
        while n_train + n_val > n - 1 {
            if n_train >= n_val {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
        }
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..n_train + n_val]);
        test.extend_from_slice(&idx[n_train + n_val..]);
    }
    let finish = |mut idx: Vec<usize>, part: &str| {
        idx.sort_unstable();
        d.select(&idx).with_meta("split", part)
    };
    Ok((finish(train, "train")?, finish(val, "val")?, finish(test, "test")?))
}
