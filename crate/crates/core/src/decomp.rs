//! Synthetic cell clouds and rank assignment.
//!
//! [`concentric_assign`] reproduces the distance-sorted three-zone layout:
//! ranks that share a weight form a zone, heavier zones sit closer to the
//! body, and each zone is cut into equal-count angular chunks.
//! [`equal_assign`] is the equal-count baseline.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MIN_CELLS: usize = 16;

/// Inner and outer radius of the generated annulus, in chord units.
pub const CLOUD_INNER_RADIUS: f64 = 0.5;
pub const CLOUD_OUTER_RADIUS: f64 = 20.0;

/// Exponent of the radial law `r = r_in + (r_out - r_in) * u^p`. With
/// `p = 3` about 79 % of the cells fall in the inner half of the annulus.
const RADIAL_EXPONENT: i32 = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DecompError {
    #[error("cloud of {cells} cells is smaller than {required}")]
    TooFewCells { cells: usize, required: usize },
    #[error("weight vector is empty or contains a zero weight")]
    InvalidWeights,
    #[error("zone with weight {weight} received {cells} cells for {ranks} ranks")]
    EmptyZone {
        weight: u32,
        cells: usize,
        ranks: usize,
    },
    #[error("rank count must be positive")]
    NoRanks,
}

pub type Result<T> = std::result::Result<T, DecompError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCloud {
    points: Vec<(f64, f64)>,
    center: (f64, f64),
}

impl CellCloud {
    pub fn new(points: Vec<(f64, f64)>, center: (f64, f64)) -> Result<Self> {
        if points.is_empty() {
            return Err(DecompError::TooFewCells {
                cells: 0,
                required: 1,
            });
        }
        Ok(Self { points, center })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distance(&self, cell: usize) -> f64 {
        let (x, y) = self.points[cell];
        (x - self.center.0).hypot(y - self.center.1)
    }

    /// Polar angle around the center in `[0, 2π)`, counter-clockwise from +x.
    pub fn angle(&self, cell: usize) -> f64 {
        let (x, y) = self.points[cell];
        let a = (y - self.center.1).atan2(x - self.center.0);
        if a < 0.0 {
            a + TAU
        } else {
            a
        }
    }
}

/// Samples `n_cells` points in an annulus around the mid-chord point
/// `(0.5, 0)`, densest near the inner edge.
pub fn generate_cloud(n_cells: usize, seed: u64) -> Result<CellCloud> {
    if n_cells < MIN_CELLS {
        return Err(DecompError::TooFewCells {
            cells: n_cells,
            required: MIN_CELLS,
        });
    }
    let center = (0.5, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_cells)
        .map(|_| {
            let u: f64 = rng.random();
            let r = CLOUD_INNER_RADIUS + (CLOUD_OUTER_RADIUS - CLOUD_INNER_RADIUS) * u.powi(RADIAL_EXPONENT);
            let theta = rng.random_range(0.0..TAU);
            (center.0 + r * theta.cos(), center.1 + r * theta.sin())
        })
        .collect();
    CellCloud::new(points, center)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightVector(Vec<u32>);

impl WeightVector {
    pub fn new(weights: Vec<u32>) -> Result<Self> {
        if weights.is_empty() || weights.contains(&0) {
            return Err(DecompError::InvalidWeights);
        }
        Ok(Self(weights))
    }

    /// Eight far-field ranks at 1, four intermediate at 5, four near-wall at 15.
    pub fn three_zone_16() -> Self {
        let mut w = vec![1; 8];
        w.extend([5; 4]);
        w.extend([15; 4]);
        Self(w)
    }

    pub fn uniform(n_ranks: usize) -> Result<Self> {
        Self::new(vec![1; n_ranks])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&w| u64::from(w)).sum()
    }

    /// Distinct weights, heaviest first. Index 0 is the innermost zone.
    pub fn zones(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.0.iter().copied().collect();
        set.into_iter().rev().collect()
    }

    pub fn ranks_with_weight(&self, weight: u32) -> Vec<u32> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &w)| w == weight)
            .map(|(r, _)| r as u32)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    owner: Vec<u32>,
    n_ranks: usize,
}

impl Assignment {
    pub fn owner(&self) -> &[u32] {
        &self.owner
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_ranks];
        for &r in &self.owner {
            c[r as usize] += 1;
        }
        c
    }

    /// `cell,x,y,rank` rows for plotting.
    pub fn to_csv(&self, cloud: &CellCloud) -> String {
        let mut out = String::from("cell,x,y,rank\n");
        for (i, (&(x, y), r)) in cloud.points().iter().zip(&self.owner).enumerate() {
            let _ = writeln!(out, "{i},{x:.6},{y:.6},{r}");
        }
        out
    }
}

fn sorted_by<F: Fn(usize) -> f64>(cells: &mut [usize], key: F) {
    // Stable: equal keys keep their input order.
    let mut keyed: Vec<(f64, usize)> = cells.iter().map(|&c| (key(c), c)).collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (slot, (_, c)) in cells.iter_mut().zip(keyed) {
        *slot = c;
    }
}

/// Splits `cells` (already angle-sorted) into `ranks.len()` contiguous
/// chunks whose sizes differ by at most one.
fn split_chunks(cells: &[usize], ranks: &[u32], owner: &mut [u32]) {
    let n = ranks.len();
    let base = cells.len() / n;
    let extra = cells.len() % n;
    let mut pos = 0;
    for (i, &rank) in ranks.iter().enumerate() {
        let size = base + usize::from(i < extra);
        for &c in &cells[pos..pos + size] {
            owner[c] = rank;
        }
        pos += size;
    }
}

pub fn concentric_assign(cloud: &CellCloud, weights: &WeightVector) -> Result<Assignment> {
    let n = cloud.len();
    if n < weights.len() {
        return Err(DecompError::TooFewCells {
            cells: n,
            required: weights.len(),
        });
    }
    let mut by_distance: Vec<usize> = (0..n).collect();
    sorted_by(&mut by_distance, |c| cloud.distance(c));

    let total_w = weights.total() as f64;
    let mut owner = vec![0u32; n];
    let mut cumulative_w = 0u64;
    let mut lo = 0usize;
    for weight in weights.zones() {
        let ranks = weights.ranks_with_weight(weight);
        cumulative_w += u64::from(weight) * ranks.len() as u64;
        let hi = ((n as f64) * cumulative_w as f64 / total_w).round() as usize;
        let hi = hi.min(n);
        let cells = hi.saturating_sub(lo);
        if cells < ranks.len() {
            return Err(DecompError::EmptyZone {
                weight,
                cells,
                ranks: ranks.len(),
            });
        }
        let mut zone: Vec<usize> = by_distance[lo..hi].to_vec();
        sorted_by(&mut zone, |c| cloud.angle(c));
        split_chunks(&zone, &ranks, &mut owner);
        lo = hi;
    }
    Ok(Assignment {
        owner,
        n_ranks: weights.len(),
    })
}

pub fn equal_assign(cloud: &CellCloud, n_ranks: usize) -> Result<Assignment> {
    if n_ranks == 0 {
        return Err(DecompError::NoRanks);
    }
    if cloud.len() < n_ranks {
        return Err(DecompError::TooFewCells {
            cells: cloud.len(),
            required: n_ranks,
        });
    }
    let mut cells: Vec<usize> = (0..cloud.len()).collect();
    sorted_by(&mut cells, |c| cloud.angle(c));
    let ranks: Vec<u32> = (0..n_ranks as u32).collect();
    let mut owner = vec![0u32; cloud.len()];
    split_chunks(&cells, &ranks, &mut owner);
    Ok(Assignment { owner, n_ranks })
}

/// Per-rank cell counts normalised to fractions that sum to one.
pub fn counts_to_weights(assignment: &Assignment) -> Result<Vec<f64>> {
    if assignment.owner.is_empty() || assignment.n_ranks == 0 {
        return Err(DecompError::NoRanks);
    }
    let n = assignment.owner.len() as f64;
    Ok(assignment.counts().into_iter().map(|c| c as f64 / n).collect())
}
