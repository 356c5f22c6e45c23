use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Result, Tensor};

/// Gaussian class clusters shifted and rescaled per domain.
///
/// Class means are `3 * N(0, I)` draws; instance `i` has label `i % C` and a
/// standard-normal offset shared by every domain, so domain `e` is
/// `mean_y + shift_e + scale_e * z_i`.
pub fn make_blobs_domains(
    n: usize,
    num_classes: usize,
    shift_vectors: &[Vec<f64>],
    scale_factors: &[f64],
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if shift_vectors.len() != scale_factors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} shift vectors but {} scale factors",
            shift_vectors.len(),
            scale_factors.len()
        )));
    }
    if n == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument("n and C must be positive".into()));
    }
    let dim = shift_vectors.first().map_or(0, Vec::len);
    if dim == 0 || shift_vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidArgument(
            "shift vectors must share a positive dimension".into(),
        ));
    }
    if let Some(s) = scale_factors.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale factor {s} must be positive")));
    }
    let mut rng = rng::stream(seed, streams::DATA);
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| rng::normal_vec(&mut rng, dim).into_iter().map(|v| 3.0 * v).collect())
        .collect();
    let offsets = rng::normal_vec(&mut rng, n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();

    shift_vectors
        .iter()
        .zip(scale_factors)
        .enumerate()
        .map(|(e, (shift, &scale))| {
            let mut data = Vec::with_capacity(n * dim);
            for (i, &y) in labels.iter().enumerate() {
                for k in 0..dim {
                    data.push(means[y][k] + shift[k] + scale * offsets[i * dim + k]);
                }
            }
            let shift_desc = shift
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(";");
            DomainDataset::new(format!("blobs{e}"), Tensor::matrix(n, dim, data)?, labels.clone(), num_classes)?
                .with_meta("generator", "blobs")?
                .with_meta("shift", shift_desc)?
                .with_meta("scale", scale)?
                .with_meta("severity", 0)?
                .with_meta("seed", seed)
        })
        .collect()
}
