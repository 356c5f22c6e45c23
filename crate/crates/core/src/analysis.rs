//! Measurement tools: Monte-Carlo cross-domain inconsistency, flat-region
//! radius probing and 2-D loss-landscape grids.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, norm};
use crate::objective::{BatchObjective, Objective};
use crate::optim::{sam_epsilon, EpsilonScaling};
use crate::rng::{self, streams};
use crate::{DomainDataset, Error, Mlp, Result, Tensor};

/// Estimate of the largest target/source loss gap over the flat region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InconsistencyEstimate {
    pub value: f64,
    pub gamma: f64,
    pub rho: f64,
    pub num_samples: usize,
    /// Accepted non-center candidates (random samples plus the SAM point).
    pub num_accepted: usize,
    pub seed: u64,
    /// Only the center passed the source-loss filter.
    pub low_coverage: bool,
}

impl InconsistencyEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Parse {
            offset: e.column(),
            message: e.to_string(),
        })
    }
}

/// Max over candidate parameters `theta'` with `|L_s(theta') - L_s(theta)| <= gamma`
/// of `|L_t(theta') - L_s(theta')|`.
///
/// Candidates are the center, the SAM ascent point on the source, and
/// `samples` draws uniform on the rho-ball (Gaussian direction, radius
/// `rho * U^(1/P)`). Draws are sequential, so a larger `samples` with the same
/// seed extends the candidate set.
pub fn estimate_inconsistency(
    m: &mut Mlp,
    source: &DomainDataset,
    target: &DomainDataset,
    gamma: f64,
    rho: f64,
    samples: usize,
    seed: u64,
) -> Result<InconsistencyEstimate> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(gamma >= 0.0) || !(rho >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} and rho = {rho} must be >= 0"
        )));
    }
    m.check_batch(source)?;
    m.check_batch(target)?;
    let (center_loss, g) = m.loss_and_grad(source)?;
    let center_gap = (m.loss(target)? - center_loss).abs();
    let mut value = center_gap;
    let mut accepted = 0;

    let saved = m.params().to_vec();
    let p = saved.len();
    let mut consider = |m: &mut Mlp, offset: &[f64]| -> Result<()> {
        for ((t, s), o) in m.params_mut().iter_mut().zip(&saved).zip(offset) {
            *t = s + o;
        }
        let ls = m.loss(source)?;
        if (ls - center_loss).abs() <= gamma {
            accepted += 1;
            let gap = (m.loss(target)? - ls).abs();
            if gap > value {
                value = gap;
            }
        }
        Ok(())
    };

    let result: Result<()> = (|| {
        let eps = sam_epsilon(&g, rho, EpsilonScaling::UnitNorm)?;
        if !eps.degenerate {
            consider(m, &eps.epsilon)?;
        }
        let mut rng = rng::stream(seed, streams::PROBE);
        for _ in 0..samples {
            let dir = rng::unit_vec(&mut rng, p);
            let u: f64 = rng.random();
            let r = rho * u.powf(1.0 / p as f64);
            let offset: Vec<f64> = dir.iter().map(|d| r * d).collect();
            consider(m, &offset)?;
        }
        Ok(())
    })();
    m.params_mut().copy_from_slice(&saved);
    result?;

    Ok(InconsistencyEstimate {
        value,
        gamma,
        rho,
        num_samples: samples,
        num_accepted: accepted,
        seed,
        low_coverage: accepted == 0,
    })
}

/// Largest radius `r <= rho_max` at which all `probes` seeded unit directions
/// keep the loss within `gamma` of the center, found by bisection to
/// `1e-3 * rho_max`. Finite probing can miss violations, so this
/// over-estimates the true radius.
pub fn flat_region_radius<O: Objective>(
    obj: &mut O,
    gamma: f64,
    rho_max: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    if probes < 8 {
        return Err(Error::InvalidArgument(format!("need >= 8 probes, got {probes}")));
    }
    if !(gamma >= 0.0) || !(rho_max >= 0.0) {
        return Err(Error::InvalidArgument("gamma and rho_max must be >= 0".into()));
    }
    if rho_max == 0.0 {
        return Ok(0.0);
    }
    let mut rng = rng::stream(seed, streams::PROBE);
    let dirs: Vec<Vec<f64>> = (0..probes).map(|_| rng::unit_vec(&mut rng, obj.num_params())).collect();
    let center = obj.loss();
    let mut flat = |r: f64| {
        dirs.iter()
            .all(|d| obj.shifted(d, r, |o| (o.loss() - center).abs() <= gamma))
    };
    if flat(rho_max) {
        return Ok(rho_max);
    }
    let (mut lo, mut hi) = (0.0, rho_max);
    while hi - lo > 1e-3 * rho_max {
        let mid = 0.5 * (lo + hi);
        if flat(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// [`flat_region_radius`] of a model's mean loss on `source`.
pub fn model_flat_region_radius(
    m: &mut Mlp,
    source: &DomainDataset,
    gamma: f64,
    rho_max: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let mut obj = BatchObjective::new(m, source)?;
    flat_region_radius(&mut obj, gamma, rho_max, probes, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Parameter,
    Data,
}

impl GridKind {
    pub fn name(self) -> &'static str {
        match self {
            GridKind::Parameter => "parameter",
            GridKind::Data => "data",
        }
    }
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parameter" => Ok(GridKind::Parameter),
            "data" => Ok(GridKind::Data),
            _ => Err(Error::InvalidArgument(format!("unknown grid kind {s:?}"))),
        }
    }
}

/// Losses over the plane `center + a * u + b * v`, `a, b` in `[-radius, radius]`.
///
/// `values[i * resolution + j]` holds offset `a = offset(i)` along the first
/// direction and `b = offset(j)` along the second.
#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub kind: GridKind,
    pub radius: f64,
    pub resolution: usize,
    pub seed: u64,
    /// Empty when the grid was parsed from CSV.
    pub directions: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub center_loss: f64,
}

impl LandscapeGrid {
    /// Offset of row/column `i`; the middle index is exactly 0 and
    /// `offset(r - 1 - i) == -offset(i)` exactly.
    pub fn offset(radius: f64, resolution: usize, i: usize) -> f64 {
        let span = (resolution - 1) as f64;
        radius * (2 * i as i64 - (resolution - 1) as i64) as f64 / span
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }

    /// `max(values) - center_loss`.
    pub fn sharpness(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - self.center_loss
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# {} {:?} {} {} {:?}",
            self.kind.name(),
            self.radius,
            self.resolution,
            self.seed,
            self.center_loss
        );
        for row in self.values.chunks(self.resolution) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Parse { offset, message };
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().ok_or_else(|| err(0, "empty grid file".into()))?;
        let fields: Vec<&str> = header.trim_end().split(' ').collect();
        if fields.len() != 6 || fields[0] != "#" {
            return Err(err(0, format!("bad grid header {header:?}")));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|_| err(0, format!("bad number {s:?}")));
        let kind: GridKind = fields[1].parse().map_err(|_| err(2, format!("bad kind {:?}", fields[1])))?;
        let radius = parse_f(fields[2])?;
        let resolution: usize = fields[3]
            .parse()
            .map_err(|_| err(0, format!("bad resolution {:?}", fields[3])))?;
        let seed: u64 = fields[4].parse().map_err(|_| err(0, format!("bad seed {:?}", fields[4])))?;
        let center_loss = parse_f(fields[5])?;

        let mut offset = header.len();
        let mut values = Vec::with_capacity(resolution * resolution);
        for row in 0..resolution {
            let line = lines
                .next()
                .ok_or_else(|| err(offset, format!("expected {resolution} rows, found {row}")))?;
            if !line.ends_with('\n') {
                return Err(err(offset + line.len(), format!("row {row} is truncated")));
            }
            let cells: Vec<&str> = line.trim_end().split(',').collect();
            if cells.len() != resolution {
                return Err(err(offset, format!("row {row} has {} cells", cells.len())));
            }
            for c in cells {
                let v: f64 = c.parse().map_err(|_| err(offset, format!("bad cell {c:?}")))?;
                if !v.is_finite() {
                    return Err(err(offset, format!("non-finite cell {c:?}")));
                }
                values.push(v);
            }
            offset += line.len();
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err(offset, "trailing content after grid".into()));
        }
        Ok(Self {
            kind,
            radius,
            resolution,
            seed,
            directions: Vec::new(),
            values,
            center_loss,
        })
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "grid resolution must be odd and >= 3, got {resolution}"
        )));
    }
    Ok(())
}

/// Two seeded orthonormal directions of length `dim`.
pub fn orthonormal_pair(dim: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "two orthonormal directions need dim >= 2, got {dim}"
        )));
    }
    let mut rng = rng::stream(seed, streams::GRID);
    let u = rng::unit_vec(&mut rng, dim);
    loop {
        let mut v = rng::normal_vec(&mut rng, dim);
        let proj = dot(&u, &v);
        for (vi, ui) in v.iter_mut().zip(&u) {
            *vi -= proj * ui;
        }
        let n = norm(&v);
        if n > 1e-8 {
            return Ok((u, v.into_iter().map(|x| x / n).collect()));
        }
    }
}

/// Parameters of grid cell `(a, b)`: `theta + a * u + b * v` elementwise.
pub fn grid_point(center: &[f64], u: &[f64], v: &[f64], a: f64, b: f64) -> Vec<f64> {
    center
        .iter()
        .zip(u)
        .zip(v)
        .map(|((t, ui), vi)| t + a * ui + b * vi)
        .collect()
}

/// Loss over a random plane in parameter space. Both directions start
/// orthonormal and every layer block is rescaled to that layer's parameter norm.
pub fn param_sharpness_grid(
    m: &mut Mlp,
    d: &DomainDataset,
    radius: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeGrid> {
    check_resolution(resolution)?;
    m.check_batch(d)?;
    let (mut u, mut v) = orthonormal_pair(m.num_params(), seed)?;
    for range in m.layer_ranges() {
        let layer_norm = norm(&m.params()[range.clone()]);
        for dir in [&mut u, &mut v] {
            let block_norm = norm(&dir[range.clone()]);
            if block_norm > 0.0 {
                for x in &mut dir[range.clone()] {
                    *x *= layer_norm / block_norm;
                }
            }
        }
    }
    let center_loss = m.loss(d)?;
    let saved = m.params().to_vec();
    let mut values = Vec::with_capacity(resolution * resolution);
    let mut result = Ok(());
    'outer: for i in 0..resolution {
        let a = LandscapeGrid::offset(radius, resolution, i);
        for j in 0..resolution {
            let b = LandscapeGrid::offset(radius, resolution, j);
            m.params_mut().copy_from_slice(&grid_point(&saved, &u, &v, a, b));
            match m.loss(d) {
                Ok(l) => values.push(l),
                Err(e) => {
                    result = Err(e);
                    break 'outer;
                }
            }
        }
    }
    m.params_mut().copy_from_slice(&saved);
    result?;
    finish_grid(GridKind::Parameter, radius, resolution, seed, vec![u, v], values, center_loss)
}

/// Mean loss with every input shifted by the same in-plane offset, along two
/// seeded orthonormal input-space directions.
pub fn data_sharpness_grid(
    m: &Mlp,
    d: &DomainDataset,
    radius: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeGrid> {
    let (u, v) = orthonormal_pair(d.input_dim(), seed)?;
    data_grid_with_directions(m, d, radius, resolution, &u, &v, seed)
}

pub fn data_grid_with_directions(
    m: &Mlp,
    d: &DomainDataset,
    radius: f64,
    resolution: usize,
    u: &[f64],
    v: &[f64],
    seed: u64,
) -> Result<LandscapeGrid> {
    check_resolution(resolution)?;
    m.check_batch(d)?;
    let dim = d.input_dim();
    if u.len() != dim || v.len() != dim {
        return Err(Error::Shape(format!(
            "directions of length {}/{} for input width {dim}",
            u.len(),
            v.len()
        )));
    }
    let center_loss = m.loss(d)?;
    let mut values = Vec::with_capacity(resolution * resolution);
    for i in 0..resolution {
        let a = LandscapeGrid::offset(radius, resolution, i);
        for j in 0..resolution {
            let b = LandscapeGrid::offset(radius, resolution, j);
            values.push(m.loss(&shift_inputs(d, u, v, a, b)?)?);
        }
    }
    finish_grid(GridKind::Data, radius, resolution, seed, vec![u.to_vec(), v.to_vec()], values, center_loss)
}

/// The dataset with every row moved to `x + a * u + b * v`.
pub fn shift_inputs(d: &DomainDataset, u: &[f64], v: &[f64], a: f64, b: f64) -> Result<DomainDataset> {
    let dim = d.input_dim();
    let mut data = Vec::with_capacity(d.len() * dim);
    for i in 0..d.len() {
        data.extend(grid_point(d.input(i), u, v, a, b));
    }
    d.with_inputs(Tensor::matrix(d.len(), dim, data)?)
}

fn finish_grid(
    kind: GridKind,
    radius: f64,
    resolution: usize,
    seed: u64,
    directions: Vec<Vec<f64>>,
    values: Vec<f64>,
    center_loss: f64,
) -> Result<LandscapeGrid> {
    if !crate::linalg::all_finite(&values) {
        return Err(Error::NonFinite(format!("{} grid values", kind.name())));
    }
    Ok(LandscapeGrid {
        kind,
        radius,
        resolution,
        seed,
        directions,
        values,
        center_loss,
    })
}
