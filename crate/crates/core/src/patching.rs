//! One overlapping patch per pixel, unit normalization, overlap-averaging
//! reconstruction and multi-size fusion.
//!
//! Borders are padded symmetrically (the edge sample is repeated, so padded
//! index `-1` maps to `0`, `-2` to `1` and so on). Patch entries that land in
//! the padding are folded back onto the pixel they were copied from when a
//! patch set is reconstructed. Under symmetric padding this gives every pixel
//! exactly `N^2` contributions, so reconstruction is a plain division.
//!
//! Patch vectors are column-major: entry `dc * N + dr` holds the pixel at
//! row offset `dr` and column offset `dc` from the patch's top-left corner.

use crate::error::{Error, Result};
use crate::imgio::Image;

/// Maps a possibly out-of-range index onto `0..len` by symmetric reflection.
pub fn reflect_index(i: isize, len: usize) -> usize {
    let len = len as isize;
    let period = 2 * len;
    let mut m = i.rem_euclid(period);
    if m >= len {
        m = period - 1 - m;
    }
    m as usize
}

/// The normalized patches of a single-channel image for one patch size.
#[derive(Clone, Debug)]
pub struct PatchSet {
    patch_size: usize,
    rows: usize,
    cols: usize,
    vectors: Vec<f64>,
    norms: Vec<f64>,
}

impl PatchSet {
    /// Normalizes raw (pre-normalization) patch vectors laid out patch by
    /// patch, `rows * cols` patches of `patch_size^2` entries each.
    pub fn from_raw(patch_size: usize, rows: usize, cols: usize, mut raw: Vec<f64>) -> Result<Self> {
        check_patch_size(patch_size)?;
        let len = patch_size * patch_size;
        if raw.len() != rows * cols * len {
            return Err(Error::DimensionMismatch(format!(
                "{} raw entries for {} patches of length {len}",
                raw.len(),
                rows * cols
            )));
        }
        let norms = raw
            .chunks_mut(len)
            .map(|v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm != 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                norm
            })
            .collect();
        Ok(PatchSet { patch_size, rows, cols, vectors: raw, norms })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn vector_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Number of patches, equal to the source pixel count.
    pub fn count(&self) -> usize {
        self.norms.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Normalized vector of patch `k`.
    pub fn vector(&self, k: usize) -> &[f64] {
        let len = self.vector_len();
        &self.vectors[k * len..(k + 1) * len]
    }

    /// Euclidean norm of patch `k` before normalization.
    pub fn norm(&self, k: usize) -> f64 {
        self.norms[k]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Center pixel `(row, col)` of patch `k`.
    pub fn origin(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    /// Undoes normalization of a vector belonging to patch `k`.
    pub fn denormalize(&self, k: usize, v: &[f64]) -> Vec<f64> {
        let norm = self.norms[k];
        if norm != 0.0 {
            v.iter().map(|x| x * norm).collect()
        } else {
            v.to_vec()
        }
    }

    /// All patches de-normalized, laid out patch by patch.
    pub fn raw_vectors(&self) -> Vec<f64> {
        (0..self.count()).flat_map(|k| self.denormalize(k, self.vector(k))).collect()
    }
}

fn check_patch_size(n: usize) -> Result<()> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("patch size must be odd and >= 3, got {n}")));
    }
    Ok(())
}

/// Extracts and normalizes the patch centered at every pixel of a
/// single-channel image.
pub fn decompose(img: &Image, patch_size: usize) -> Result<PatchSet> {
    if img.channels() != 1 {
        return Err(Error::InvalidParameter(format!(
            "decompose expects one channel, got {}",
            img.channels()
        )));
    }
    decompose_plane(img.plane(0), img.rows(), img.cols(), patch_size)
}

pub(crate) fn decompose_plane(
    plane: &[f64],
    rows: usize,
    cols: usize,
    patch_size: usize,
) -> Result<PatchSet> {
    check_patch_size(patch_size)?;
    if patch_size > rows.min(cols) {
        return Err(Error::InvalidParameter(format!(
            "patch size {patch_size} exceeds image {rows}x{cols}"
        )));
    }
    let n = patch_size;
    let half = (n / 2) as isize;
    let col_index: Vec<Vec<usize>> = (0..cols)
        .map(|c| (0..n).map(|dc| reflect_index(c as isize + dc as isize - half, cols)).collect())
        .collect();
    let row_index: Vec<Vec<usize>> = (0..rows)
        .map(|r| (0..n).map(|dr| reflect_index(r as isize + dr as isize - half, rows)).collect())
        .collect();

    let mut raw = Vec::with_capacity(rows * cols * n * n);
    for rr in &row_index {
        for cc in &col_index {
            for &c in cc {
                for &r in rr {
                    raw.push(plane[r * cols + c]);
                }
            }
        }
    }
    PatchSet::from_raw(n, rows, cols, raw)
}

/// Places de-normalized patch vectors back into an image, averaging the
/// `N^2` contributions every pixel receives.
pub fn reconstruct(patches: &PatchSet, denoised: &[f64], rows: usize, cols: usize) -> Result<Image> {
    if rows != patches.rows || cols != patches.cols {
        return Err(Error::DimensionMismatch(format!(
            "patch set is {}x{}, target is {rows}x{cols}",
            patches.rows, patches.cols
        )));
    }
    let data = accumulate(denoised, rows, cols, patches.patch_size)?;
    Image::new(rows, cols, 1, data)
}

pub(crate) fn accumulate(denoised: &[f64], rows: usize, cols: usize, n: usize) -> Result<Vec<f64>> {
    let len = n * n;
    if denoised.len() != rows * cols * len {
        return Err(Error::DimensionMismatch(format!(
            "{} denoised entries for {} patches of length {len}",
            denoised.len(),
            rows * cols
        )));
    }
    let half = (n / 2) as isize;
    let mut acc = vec![0.0; rows * cols];
    for (k, v) in denoised.chunks(len).enumerate() {
        let (r0, c0) = ((k / cols) as isize - half, (k % cols) as isize - half);
        for dc in 0..n {
            let c = reflect_index(c0 + dc as isize, cols);
            for dr in 0..n {
                let r = reflect_index(r0 + dr as isize, rows);
                acc[r * cols + c] += v[dc * n + dr];
            }
        }
    }
    let scale = 1.0 / len as f64;
    acc.iter_mut().for_each(|x| *x *= scale);
    Ok(acc)
}

/// Pixel-wise weighted sum of equally shaped images. Weights must sum to 1.
pub fn fuse_scales(images: &[Image], weights: &[f64]) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidParameter("no images to fuse".into()))?;
    if images.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} weights",
            images.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!("fusion weights sum to {total}, not 1")));
    }
    for img in images {
        first.ensure_same_shape(img)?;
    }
    let mut data = vec![0.0; first.data().len()];
    for (img, &w) in images.iter().zip(weights) {
        for (d, v) in data.iter_mut().zip(img.data()) {
            *d += w * v;
        }
    }
    Image::new(first.rows(), first.cols(), first.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_reflection() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 4, 4, 3, 2]);
    }

    #[test]
    fn one_patch_per_pixel() {
        let img = Image::from_fn(4, 5, |r, c| (r + 2 * c) as f64).unwrap();
        let set = decompose(&img, 3).unwrap();
        assert_eq!(set.count(), 20);
        assert_eq!(set.origin(7), (1, 2));
    }

    #[test]
    fn constant_patches_have_known_norm() {
        let img = Image::filled(6, 6, 1, 10.0).unwrap();
        let set = decompose(&img, 3).unwrap();
        for k in 0..set.count() {
            assert!((set.norm(k) - 30.0).abs() < 1e-12);
            assert!(set.vector(k).iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
    }

    #[test]
    fn zero_image_skips_normalization() {
        let img = Image::filled(5, 5, 1, 0.0).unwrap();
        let set = decompose(&img, 3).unwrap();
        assert!(set.norms().iter().all(|&n| n == 0.0));
        assert!((0..set.count()).all(|k| set.vector(k).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn bad_patch_sizes() {
        let img = Image::filled(5, 5, 1, 1.0).unwrap();
        assert!(decompose(&img, 4).is_err());
        assert!(decompose(&img, 1).is_err());
        assert!(decompose(&img, 7).is_err());
    }

    #[test]
    fn column_major_order() {
        let img = Image::from_fn(5, 5, |r, c| (10 * r + c) as f64).unwrap();
        let set = decompose(&img, 3).unwrap();
        let center = 2 * 5 + 2;
        let raw = set.denormalize(center, set.vector(center));
        // column 1 of the patch, row 0 -> pixel (1, 2)
        assert!((raw[3] - 12.0).abs() < 1e-12);
        assert!((raw[1] - 21.0).abs() < 1e-12);
    }

    #[test]
    fn constant_patches_reconstruct_constant() {
        let img = Image::filled(6, 7, 1, 0.0).unwrap();
        let set = decompose(&img, 5).unwrap();
        let patches = vec![4.5; 42 * 25];
        let out = reconstruct(&set, &patches, 6, 7).unwrap();
        assert!(out.data().iter().all(|v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn one_contribution_is_one_over_n_squared() {
        let img = Image::from_fn(9, 9, |r, c| ((r * 7 + c * 3) % 11) as f64).unwrap();
        let set = decompose(&img, 3).unwrap();
        let mut raw = set.raw_vectors();
        // patch centered at (4,4); its center entry is (dr=1, dc=1) -> index 4
        let k = 4 * 9 + 4;
        raw[k * 9 + 4] += 9.0;
        let out = reconstruct(&set, &raw, 9, 9).unwrap();
        assert!((out.get(0, 4, 4) - img.get(0, 4, 4) - 1.0).abs() < 1e-12);
        assert!((out.get(0, 4, 5) - img.get(0, 4, 5)).abs() < 1e-12);
    }

    #[test]
    fn reconstruct_rejects_bad_lengths() {
        let img = Image::filled(5, 5, 1, 1.0).unwrap();
        let set = decompose(&img, 3).unwrap();
        assert!(reconstruct(&set, &[0.0; 10], 5, 5).is_err());
        assert!(reconstruct(&set, &set.raw_vectors(), 5, 6).is_err());
    }

    #[test]
    fn fusion_contracts() {
        let a = Image::filled(3, 3, 1, 0.0).unwrap();
        let b = Image::filled(3, 3, 1, 100.0).unwrap();
        assert_eq!(fuse_scales(std::slice::from_ref(&b), &[1.0]).unwrap(), b);
        assert_eq!(fuse_scales(&[b.clone(), b.clone()], &[0.5, 0.5]).unwrap(), b);
        let mix = fuse_scales(&[a.clone(), b.clone()], &[0.25, 0.75]).unwrap();
        assert!(mix.data().iter().all(|v| (v - 75.0).abs() < 1e-12));
        assert!(fuse_scales(&[a.clone(), b.clone()], &[0.5, 0.6]).is_err());
        assert!(fuse_scales(std::slice::from_ref(&a), &[0.5, 0.5]).is_err());
        let c = Image::filled(3, 4, 1, 0.0).unwrap();
        assert!(fuse_scales(&[a, c], &[0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn decompose_reconstruct_is_identity(
            rows in 9usize..16,
            cols in 9usize..16,
            size_idx in 0usize..4,
            seed in any::<u64>(),
        ) {
            let n = [3, 5, 7, 9][size_idx];
            let img = Image::from_fn(rows, cols, |r, c| {
                let h = (r as u64 * 31 + c as u64 * 17).wrapping_mul(seed | 1);
                (h % 256) as f64
            }).unwrap();
            let set = decompose(&img, n).unwrap();
            for k in 0..set.count() {
                if set.norm(k) != 0.0 {
                    let norm: f64 = set.vector(k).iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((norm - 1.0).abs() < 1e-12);
                }
            }
            let out = reconstruct(&set, &set.raw_vectors(), rows, cols).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
