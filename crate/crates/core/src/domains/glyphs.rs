//! Procedural 8x8 glyph images under graded corruptions.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Result, Tensor};

pub const SIDE: usize = 8;
pub const PIXELS: usize = SIDE * SIDE;
pub const GLYPH_CLASSES: usize = 4;
pub const MAX_SEVERITY: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    GaussNoise,
    Contrast,
    Pixelate,
    Occlude,
}

impl Corruption {
    pub fn name(self) -> &'static str {
        match self {
            Corruption::GaussNoise => "gauss_noise",
            Corruption::Contrast => "contrast",
            Corruption::Pixelate => "pixelate",
            Corruption::Occlude => "occlude",
        }
    }

    pub const ALL: [Corruption; 4] = [
        Corruption::GaussNoise,
        Corruption::Contrast,
        Corruption::Pixelate,
        Corruption::Occlude,
    ];
}

impl fmt::Display for Corruption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Corruption::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown corruption {s:?}")))
    }
}

/// Soft step: 1 inside (`margin > 0`), 0 outside, linear over 0.8 pixels.
fn inside(margin: f64) -> f64 {
    (0.5 + margin / 0.8).clamp(0.0, 1.0)
}

/// Clean glyphs: disk, cross, bar, ring (labels 0..4, cycled), with jittered
/// position, size and intensity.
pub fn base_glyphs(n: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
    let mut rng = rng::stream(seed, streams::DATA);
    (0..n)
        .map(|i| {
            let label = i % GLYPH_CLASSES;
            let cx = 3.5 + rng.random_range(-0.8..0.8);
            let cy = 3.5 + rng.random_range(-0.8..0.8);
            let size = rng.random_range(0.85..1.15);
            let intensity = rng.random_range(0.7..1.0);
            let mut img = vec![0.0; PIXELS];
            for r in 0..SIDE {
                for c in 0..SIDE {
                    let dx = c as f64 - cx;
                    let dy = r as f64 - cy;
                    let dist = (dx * dx + dy * dy).sqrt();
                    let v = match label {
                        0 => inside(2.2 * size - dist),
                        1 => {
                            let arm = 3.2 * size - dx.abs().max(dy.abs());
                            let stroke = 0.6 - dx.abs().min(dy.abs());
                            inside(arm.min(stroke))
                        }
                        2 => inside((3.2 * size - dx.abs()).min(0.9 - dy.abs())),
                        _ => inside(0.6 - (dist - 2.6 * size).abs()),
                    };
                    img[r * SIDE + c] = intensity * v;
                }
            }
            (img, label)
        })
        .collect()
}

/// Applies `corruption` at `severity` (0 leaves the image untouched).
/// `noise` holds one standard-normal draw per pixel and `anchor` the occluder
/// corner, both fixed per image so that severities nest.
fn corrupt(img: &[f64], corruption: Corruption, severity: u32, noise: &[f64], anchor: (usize, usize)) -> Vec<f64> {
    if severity == 0 {
        return img.to_vec();
    }
    let k = severity as f64;
    match corruption {
        Corruption::GaussNoise => img.iter().zip(noise).map(|(v, z)| v + 0.05 * k * z).collect(),
        Corruption::Contrast => {
            let mean = img.iter().sum::<f64>() / img.len() as f64;
            let factor = 1.0 - 0.18 * k;
            img.iter().map(|v| mean + (v - mean) * factor).collect()
        }
        Corruption::Pixelate => {
            let weight = k / MAX_SEVERITY as f64;
            let mut out = img.to_vec();
            for br in (0..SIDE).step_by(2) {
                for bc in (0..SIDE).step_by(2) {
                    let cells = [(br, bc), (br, bc + 1), (br + 1, bc), (br + 1, bc + 1)];
                    let avg = cells.iter().map(|&(r, c)| img[r * SIDE + c]).sum::<f64>() / 4.0;
                    for (r, c) in cells {
                        let v = img[r * SIDE + c];
                        out[r * SIDE + c] = (1.0 - weight) * v + weight * avg;
                    }
                }
            }
            out
        }
        Corruption::Occlude => {
            let side = severity as usize + 1;
            let mut out = img.to_vec();
            for r in anchor.0..anchor.0 + side {
                for c in anchor.1..anchor.1 + side {
                    out[r * SIDE + c] = 0.5;
                }
            }
            out
        }
    }
}

/// One domain per severity over a shared set of clean glyphs.
pub fn make_glyphs_corrupted(
    n: usize,
    corruption: Corruption,
    severities: &[u32],
    seed: u64,
) -> Result<Vec<DomainDataset>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if let Some(s) = severities.iter().find(|&&s| s > MAX_SEVERITY) {
        return Err(Error::InvalidArgument(format!("severity {s} outside 0..=5")));
    }
    for (i, s) in severities.iter().enumerate() {
        if severities[..i].contains(s) {
            return Err(Error::InvalidArgument(format!("duplicate severity {s}")));
        }
    }
    let base = base_glyphs(n, seed);
    let mut rng = rng::stream(seed, streams::NOISE);
    let noise = rng::normal_vec(&mut rng, n * PIXELS);
    let max_side = MAX_SEVERITY as usize + 1;
    let anchors: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0..=SIDE - max_side),
                rng.random_range(0..=SIDE - max_side),
            )
        })
        .collect();
    let labels: Vec<usize> = base.iter().map(|(_, y)| *y).collect();

    severities
        .iter()
        .map(|&severity| {
            let mut data = Vec::with_capacity(n * PIXELS);
            for (i, (img, _)) in base.iter().enumerate() {
                data.extend(corrupt(img, corruption, severity, &noise[i * PIXELS..(i + 1) * PIXELS], anchors[i]));
            }
            let id = if severity == 0 {
                "clean".to_string()
            } else {
                format!("{}_s{severity}", corruption.name())
            };
            DomainDataset::new(id, Tensor::matrix(n, PIXELS, data)?, labels.clone(), GLYPH_CLASSES)?
                .with_meta("generator", "glyphs")?
                .with_meta("corruption", corruption)?
                .with_meta("shift", severity)?
                .with_meta("severity", severity)?
                .with_meta("seed", seed)
        })
        .collect()
}
