//! Region-growing post-processor: flat-pixel smoothing, intensity binning,
//! averaging of large 4-connected same-bin components, and a noise-dependent
//! blend with the denoiser output.
//!
//! Every stage works on each channel plane independently.

use crate::error::{Error, Result};
use crate::imgio::{quantize, Image};
use crate::patching::reflect_index;

/// Per-pixel flatness flags.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatMask {
    rows: usize,
    cols: usize,
    channels: usize,
    flat: Vec<bool>,
    zeta: f64,
}

impl FlatMask {
    pub fn from_flags(img: &Image, flat: Vec<bool>, zeta: f64) -> Result<Self> {
        if flat.len() != img.data().len() {
            return Err(Error::DimensionMismatch("mask does not match image".into()));
        }
        Ok(FlatMask { rows: img.rows(), cols: img.cols(), channels: img.channels(), flat, zeta })
    }

    pub fn is_flat(&self, channel: usize, row: usize, col: usize) -> bool {
        self.flat[(channel * self.rows + row) * self.cols + col]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flat
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn count(&self) -> usize {
        self.flat.iter().filter(|&&f| f).count()
    }

    fn matches(&self, img: &Image) -> bool {
        self.rows == img.rows() && self.cols == img.cols() && self.channels == img.channels()
    }

    /// White where flat.
    pub fn to_image(&self) -> Image {
        let data = self.flat.iter().map(|&f| if f { 255.0 } else { 0.0 }).collect();
        Image::new(self.rows, self.cols, self.channels, data).expect("mask shape is valid")
    }
}

/// 3x3 symmetric-padded neighborhood of a pixel.
fn neighborhood(plane: &[f64], rows: usize, cols: usize, r: usize, c: usize) -> [f64; 9] {
    let mut out = [0.0; 9];
    let mut i = 0;
    for dr in -1isize..=1 {
        let rr = reflect_index(r as isize + dr, rows);
        for dc in -1isize..=1 {
            out[i] = plane[rr * cols + reflect_index(c as isize + dc, cols)];
            i += 1;
        }
    }
    out
}

fn mean9(v: &[f64; 9]) -> f64 {
    v.iter().sum::<f64>() / 9.0
}

fn std9(v: &[f64; 9]) -> f64 {
    let m = mean9(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 9.0).sqrt()
}

fn map_planes(img: &Image, mut f: impl FnMut(usize, &[f64], usize, usize) -> Vec<f64>) -> Image {
    let mut data = Vec::with_capacity(img.data().len());
    for ch in 0..img.channels() {
        data.extend(f(ch, img.plane(ch), img.rows(), img.cols()));
    }
    Image::new(img.rows(), img.cols(), img.channels(), data).expect("plane sizes are preserved")
}

/// A pixel is flat when the population standard deviation of its 3x3
/// neighborhood is at most `zeta`.
pub fn detect_flat(img: &Image, zeta: f64) -> Result<FlatMask> {
    if zeta.is_nan() || zeta < 0.0 {
        return Err(Error::InvalidParameter(format!("zeta must be nonnegative, got {zeta}")));
    }
    let (rows, cols) = (img.rows(), img.cols());
    let mut flat = Vec::with_capacity(img.data().len());
    for ch in 0..img.channels() {
        let plane = img.plane(ch);
        for r in 0..rows {
            for c in 0..cols {
                flat.push(std9(&neighborhood(plane, rows, cols, r, c)) <= zeta);
            }
        }
    }
    FlatMask::from_flags(img, flat, zeta)
}

/// Replaces every flat pixel by its 3x3 neighborhood mean taken from the
/// input image.
pub fn smooth_flat(img: &Image, mask: &FlatMask) -> Result<Image> {
    if !mask.matches(img) {
        return Err(Error::DimensionMismatch("mask does not match image".into()));
    }
    Ok(map_planes(img, |ch, plane, rows, cols| {
        let offset = ch * rows * cols;
        (0..rows * cols)
            .map(|i| {
                if mask.flat[offset + i] {
                    mean9(&neighborhood(plane, rows, cols, i / cols, i % cols))
                } else {
                    plane[i]
                }
            })
            .collect()
    }))
}

/// Equal-width intensity bins over `[0, 255]`, assigned on rounded values.
#[derive(Clone, Debug, PartialEq)]
pub struct BinPartition {
    rows: usize,
    cols: usize,
    channels: usize,
    num_bins: usize,
    bin_of: Vec<usize>,
    /// Sample indices (into the image data) per `channel * num_bins + bin`.
    members: Vec<Vec<usize>>,
}

impl BinPartition {
    pub fn new(img: &Image, num_bins: usize) -> Result<Self> {
        if num_bins == 0 || num_bins > 256 {
            return Err(Error::InvalidParameter(format!(
                "number of bins must lie in 1..=256, got {num_bins}"
            )));
        }
        let n = img.pixel_count();
        let mut members = vec![Vec::new(); num_bins * img.channels()];
        let bin_of: Vec<usize> = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let b = usize::from(quantize(v)) * num_bins / 256;
                members[(i / n) * num_bins + b].push(i);
                b
            })
            .collect();
        Ok(BinPartition {
            rows: img.rows(),
            cols: img.cols(),
            channels: img.channels(),
            num_bins,
            bin_of,
            members,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Bin of sample `index` of the image data.
    pub fn bin_of(&self, index: usize) -> usize {
        self.bin_of[index]
    }

    pub fn members(&self, channel: usize, bin: usize) -> &[usize] {
        &self.members[channel * self.num_bins + bin]
    }

    /// White where the pixel of `channel` falls in `bin`.
    pub fn bin_mask(&self, channel: usize, bin: usize) -> Image {
        let n = self.rows * self.cols;
        let mut data = vec![0.0; n];
        for &i in self.members(channel, bin) {
            data[i - channel * n] = 255.0;
        }
        Image::new(self.rows, self.cols, 1, data).expect("mask shape is valid")
    }
}

/// 4-connected components of one bin, as lists of sample indices.
fn components(bins: &BinPartition, channel: usize, bin: usize) -> Vec<Vec<usize>> {
    let (rows, cols) = (bins.rows, bins.cols);
    let offset = channel * rows * cols;
    let in_bin = |i: usize| bins.bin_of[i] == bin;
    let mut visited = vec![false; rows * cols];
    let mut out = Vec::new();
    for &start in bins.members(channel, bin) {
        if visited[start - offset] {
            continue;
        }
        visited[start - offset] = true;
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let p = i - offset;
            let (r, c) = (p / cols, p % cols);
            let mut push = |q: usize| {
                if !visited[q] && in_bin(q + offset) {
                    visited[q] = true;
                    comp.push(q + offset);
                    stack.push(q + offset);
                }
            };
            if r > 0 {
                push(p - cols);
            }
            if r + 1 < rows {
                push(p + cols);
            }
            if c > 0 {
                push(p - 1);
            }
            if c + 1 < cols {
                push(p + 1);
            }
        }
        out.push(comp);
    }
    out
}

/// Replaces every 4-connected same-bin component of at least `min_region`
/// pixels by its mean intensity.
pub fn region_grow(img: &Image, bins: &BinPartition, min_region: usize) -> Result<Image> {
    if min_region == 0 {
        return Err(Error::InvalidParameter("min_region must be at least 1".into()));
    }
    if bins.rows != img.rows() || bins.cols != img.cols() || bins.channels != img.channels() {
        return Err(Error::DimensionMismatch("bin partition does not match image".into()));
    }
    let mut data = img.data().to_vec();
    for ch in 0..bins.channels {
        for bin in 0..bins.num_bins {
            for comp in components(bins, ch, bin) {
                if comp.len() < min_region {
                    continue;
                }
                let mean = comp.iter().map(|&i| img.data()[i]).sum::<f64>() / comp.len() as f64;
                for i in comp {
                    data[i] = mean;
                }
            }
        }
    }
    Image::new(img.rows(), img.cols(), img.channels(), data)
}

/// Maps the noise level to the weight of the region-grown image.
#[derive(Clone, Debug, PartialEq)]
pub enum RhoRule {
    /// `rho2 = min(cap, slope * sigma)`.
    Linear { slope: f64, cap: f64 },
    /// Piecewise-linear interpolation through `(sigma, rho2)` points sorted
    /// by sigma, held constant outside the table.
    Table(Vec<(f64, f64)>),
}

impl Default for RhoRule {
    fn default() -> Self {
        RhoRule::Linear { slope: 0.01, cap: 0.5 }
    }
}

impl RhoRule {
    pub fn rho2(&self, sigma: f64) -> f64 {
        let raw = match self {
            RhoRule::Linear { slope, cap } => (slope * sigma).min(*cap),
            RhoRule::Table(points) => match points.as_slice() {
                [] => 0.0,
                [(_, only)] => *only,
                _ => interpolate(points, sigma),
            },
        };
        raw.clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            RhoRule::Linear { slope, cap } if *slope >= 0.0 && (0.0..=1.0).contains(cap) => Ok(()),
            RhoRule::Table(p)
                if p.windows(2).all(|w| w[0].0 < w[1].0)
                    && p.iter().all(|(_, r)| (0.0..=1.0).contains(r)) =>
            {
                Ok(())
            }
            _ => Err(Error::InvalidParameter(format!("invalid rho rule {self:?}"))),
        }
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let (first, last) = (points[0], points[points.len() - 1]);
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = points.partition_point(|p| p.0 <= x);
    let (a, b) = (points[i - 1], points[i]);
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// `rho1 * denoised + rho2 * grown` with `rho2 = rule.rho2(sigma)` and
/// `rho1 = 1 - rho2`.
pub fn blend(denoised: &Image, grown: &Image, sigma: f64, rule: &RhoRule) -> Result<Image> {
    denoised.ensure_same_shape(grown)?;
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("sigma must be nonnegative, got {sigma}")));
    }
    let rho2 = rule.rho2(sigma);
    if rho2 == 0.0 {
        return Ok(denoised.clone());
    }
    let rho1 = 1.0 - rho2;
    let data = denoised.data().iter().zip(grown.data()).map(|(d, g)| rho1 * d + rho2 * g).collect();
    Image::new(denoised.rows(), denoised.cols(), denoised.channels(), data)
}

/// Default flatness threshold per unit of estimated residual noise.
pub const ZETA_PER_RESIDUAL_SIGMA: f64 = 2.0;
/// Smallest default flatness threshold.
pub const ZETA_FLOOR: f64 = 2.0;

/// Post-processor settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PostprocConfig {
    pub enabled: bool,
    /// Flatness threshold; `None` derives it from the residual noise.
    pub zeta: Option<f64>,
    pub num_bins: usize,
    pub min_region: usize,
    pub rho: RhoRule,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig { enabled: true, zeta: None, num_bins: 64, min_region: 64, rho: RhoRule::default() }
    }
}

/// Default flatness threshold for an image whose residual noise is
/// estimated at `residual_sigma`.
pub fn default_zeta(residual_sigma: f64) -> f64 {
    (ZETA_PER_RESIDUAL_SIGMA * residual_sigma).max(ZETA_FLOOR)
}

/// Intermediate images of one post-processing pass.
#[derive(Clone, Debug)]
pub struct PostprocOutput {
    pub mask: FlatMask,
    pub smoothed: Image,
    pub bins: BinPartition,
    pub grown: Image,
    pub blended: Image,
}

/// Full pass, keeping every intermediate.
pub fn postprocess_detailed(denoised: &Image, sigma: f64, cfg: &PostprocConfig) -> Result<PostprocOutput> {
    cfg.rho.validate()?;
    let zeta = match cfg.zeta {
        Some(z) => z,
        None => default_zeta(crate::denoiser::estimate_sigma(denoised)),
    };
    let mask = detect_flat(denoised, zeta)?;
    let smoothed = smooth_flat(denoised, &mask)?;
    let bins = BinPartition::new(&smoothed, cfg.num_bins)?;
    let grown = region_grow(&smoothed, &bins, cfg.min_region)?;
    let blended = blend(denoised, &grown, sigma, &cfg.rho)?;
    Ok(PostprocOutput { mask, smoothed, bins, grown, blended })
}

/// Flat smoothing, binning, region growing and the final blend; identity
/// when disabled.
pub fn postprocess(denoised: &Image, sigma: f64, cfg: &PostprocConfig) -> Result<Image> {
    if !cfg.enabled {
        return Ok(denoised.clone());
    }
    Ok(postprocess_detailed(denoised, sigma, cfg)?.blended)
}
