use std::f64::consts::PI;

use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Result, Tensor};

/// Two interleaving half circles, centered on the origin, `n/2` per class.
///
/// Points sit at evenly spaced angles with isotropic Gaussian noise.
pub fn base_moons(n: usize, noise: f64, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!("moons need an even n >= 4, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise = {noise} must be >= 0")));
    }
    let half = n / 2;
    let mut rng = rng::stream(seed, streams::DATA);
    let mut points = Vec::with_capacity(n);
    for class in 0..2 {
        for i in 0..half {
            let t = PI * i as f64 / (half - 1) as f64;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let nx = rng::normal(&mut rng);
            let ny = rng::normal(&mut rng);
            points.push([x - 0.5 + noise * nx, y - 0.25 + noise * ny]);
        }
    }
    Ok(points)
}

/// Rotates `p` counter-clockwise about the origin.
pub fn rotate(p: [f64; 2], angle_deg: f64) -> [f64; 2] {
    let (s, c) = angle_deg.to_radians().sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// One domain per angle: the same base sample rotated by that angle.
pub fn make_moons_domains(
    n: usize,
    angles_deg: &[f64],
    noise: f64,
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    for (i, a) in angles_deg.iter().enumerate() {
        if !a.is_finite() {
            return Err(Error::InvalidArgument(format!("angle {a} is not finite")));
        }
        if angles_deg[..i].contains(a) {
            return Err(Error::InvalidArgument(format!("duplicate angle {a}")));
        }
    }
    let base = base_moons(n, noise, seed)?;
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    angles_deg
        .iter()
        .map(|&angle| {
            let data = if angle == 0.0 {
                base.iter().flatten().copied().collect()
            } else {
                base.iter().flat_map(|&p| rotate(p, angle)).collect()
            };
            DomainDataset::new(format!("rot{angle}"), Tensor::matrix(n, 2, data)?, labels.clone(), 2)?
                .with_meta("generator", "moons")?
                .with_meta("shift", angle)?
                .with_meta("severity", 0)?
                .with_meta("noise", noise)?
                .with_meta("seed", seed)
        })
        .collect()
}
