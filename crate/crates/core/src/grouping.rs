//! Intensity-invariant grouping of patches by absolute Pearson correlation.

use crate::error::{Error, Result};
use crate::patching::PatchSet;

/// Centered sum of squares (relative to the vector's energy) below which a
/// patch counts as having zero variance.
const FLAT_TOL: f64 = 1e-24;

/// Where neighbors are searched for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchWindow {
    /// Whole image up to 256x256 pixels, a radius of 32 pixels above that.
    Auto,
    Full,
    /// Square window of the given radius around the anchor's center pixel.
    Radius(usize),
}

impl SearchWindow {
    pub const AUTO_FULL_LIMIT: usize = 256 * 256;
    pub const AUTO_RADIUS: usize = 32;

    /// Radius to use for an image with `pixels` pixels; `None` is unbounded.
    pub fn radius_for(self, pixels: usize) -> Option<usize> {
        match self {
            SearchWindow::Full => None,
            SearchWindow::Radius(r) => Some(r),
            SearchWindow::Auto if pixels <= Self::AUTO_FULL_LIMIT => None,
            SearchWindow::Auto => Some(Self::AUTO_RADIUS),
        }
    }
}

/// Pearson correlation; zero when either vector has zero variance.
pub fn corr_coeff(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlating vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InvalidParameter("correlation needs at least two samples".into()));
    }
    match (standardize(a), standardize(b)) {
        (Some(za), Some(zb)) => Ok(dot(&za, &zb).clamp(-1.0, 1.0)),
        _ => Ok(0.0),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean-removed, unit-length copy; `None` for zero-variance input.
fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let ss = dot(&centered, &centered);
    let energy = dot(v, v);
    if ss <= FLAT_TOL * energy || ss == 0.0 {
        return None;
    }
    let norm = ss.sqrt();
    Some(centered.into_iter().map(|x| x / norm).collect())
}

/// The group of an anchor patch.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub anchor: usize,
    /// Patch indices, anchor first, then by decreasing `|r|`.
    pub members: Vec<usize>,
    /// `|r|` of each member against the anchor (1 for the anchor itself).
    pub abs_corr: Vec<f64>,
    /// Collaboration weights, proportional to `abs_corr`, summing to 1.
    pub weights: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Grouping parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupingParams {
    /// Minimum `|r|` for membership.
    pub epsilon: f64,
    /// Cap on the group size, anchor included.
    pub max_neighbors: usize,
    pub window: SearchWindow,
}

impl GroupingParams {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.max_neighbors == 0 {
            return Err(Error::InvalidParameter("max_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Standardized patch vectors of one or more equally sized patch sets,
/// ready for repeated neighbor queries. Patches are indexed globally: set
/// `s`, patch `k` has index `s * K + k`.
pub struct CorrelationIndex {
    len: usize,
    rows: usize,
    cols: usize,
    per_set: usize,
    /// Standardized vectors; all zeros for zero-variance patches.
    z: Vec<f64>,
    flat: Vec<bool>,
}

impl CorrelationIndex {
    pub fn new(sets: &[&PatchSet]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidParameter("no patch sets to index".into()))?;
        let len = first.vector_len();
        let mut z = Vec::with_capacity(sets.len() * first.count() * len);
        let mut flat = Vec::with_capacity(sets.len() * first.count());
        for set in sets {
            if set.vector_len() != len || set.rows() != first.rows() || set.cols() != first.cols() {
                return Err(Error::DimensionMismatch("patch sets differ in shape".into()));
            }
            for k in 0..set.count() {
                match standardize(set.vector(k)) {
                    Some(v) => {
                        z.extend(v);
                        flat.push(false);
                    }
                    None => {
                        z.extend(std::iter::repeat_n(0.0, len));
                        flat.push(true);
                    }
                }
            }
        }
        Ok(CorrelationIndex {
            len,
            rows: first.rows(),
            cols: first.cols(),
            per_set: first.count(),
            z,
            flat,
        })
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    fn z(&self, i: usize) -> &[f64] {
        &self.z[i * self.len..(i + 1) * self.len]
    }

    /// Pearson correlation between two indexed patches.
    pub fn corr(&self, a: usize, b: usize) -> f64 {
        if self.flat[a] || self.flat[b] {
            0.0
        } else {
            dot(self.z(a), self.z(b)).clamp(-1.0, 1.0)
        }
    }

    /// Neighbors of patch `anchor` among every indexed patch, or only among
    /// those of set `only_set` when given.
    pub fn neighbors(
        &self,
        anchor: usize,
        params: &GroupingParams,
        only_set: Option<usize>,
    ) -> Result<NeighborSet> {
        params.validate()?;
        if anchor >= self.len() {
            return Err(Error::InvalidParameter(format!("anchor {anchor} out of range")));
        }
        let mut found: Vec<(f64, usize)> = Vec::new();
        if !self.flat[anchor] {
            let za = self.z(anchor);
            let radius = params.window.radius_for(self.rows * self.cols);
            let (ar, ac) = self.position(anchor);
            let sets = match only_set {
                Some(s) => s..s + 1,
                None => 0..self.len() / self.per_set,
            };
            for s in sets {
                let (r_lo, r_hi, c_lo, c_hi) = match radius {
                    None => (0, self.rows - 1, 0, self.cols - 1),
                    Some(rad) => (
                        ar.saturating_sub(rad),
                        (ar + rad).min(self.rows - 1),
                        ac.saturating_sub(rad),
                        (ac + rad).min(self.cols - 1),
                    ),
                };
                for r in r_lo..=r_hi {
                    for c in c_lo..=c_hi {
                        let i = s * self.per_set + r * self.cols + c;
                        if i == anchor || self.flat[i] {
                            continue;
                        }
                        let r = dot(za, self.z(i)).clamp(-1.0, 1.0).abs();
                        if r >= params.epsilon {
                            found.push((r, i));
                        }
                    }
                }
            }
        }
        let keep = params.max_neighbors - 1;
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if found.len() > keep {
            if keep > 0 {
                found.select_nth_unstable_by(keep - 1, order);
            }
            found.truncate(keep);
        }
        found.sort_unstable_by(order);

        let mut members = Vec::with_capacity(found.len() + 1);
        let mut abs_corr = Vec::with_capacity(found.len() + 1);
        members.push(anchor);
        abs_corr.push(1.0);
        for (r, i) in found {
            members.push(i);
            abs_corr.push(r);
        }
        let total: f64 = abs_corr.iter().sum();
        let weights = abs_corr.iter().map(|a| a / total).collect();
        Ok(NeighborSet { anchor, members, abs_corr, weights })
    }

    fn position(&self, i: usize) -> (usize, usize) {
        let k = i % self.per_set;
        (k / self.cols, k % self.cols)
    }
}

/// Group of patch `k`: all patches with `|r| >= epsilon`, truncated to the
/// `max_neighbors - 1` strongest, plus `k` itself.
pub fn find_neighbors(
    patches: &PatchSet,
    k: usize,
    epsilon: f64,
    max_neighbors: usize,
    window: Option<usize>,
) -> Result<NeighborSet> {
    let params = GroupingParams {
        epsilon,
        max_neighbors,
        window: window.map_or(SearchWindow::Full, SearchWindow::Radius),
    };
    CorrelationIndex::new(&[patches])?.neighbors(k, &params, None)
}
