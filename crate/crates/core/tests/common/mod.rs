//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the solver or the metric code under test.

#![allow(dead_code)]

use std::path::PathBuf;

use c2df::{load_image, Dictionary, Image};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

pub fn fixture(name: &str) -> Image {
    load_image(data_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub const TEXTURES: [&str; 5] = ["brick_64.pgm", "grass_64.pgm", "gravel_64.pgm", "text_64.pgm", "coins_64.pgm"];

pub fn random_image(rng: &mut ChaCha8Rng, rows: usize, cols: usize, channels: usize) -> Image {
    let data = (0..rows * cols * channels).map(|_| rng.gen_range(0.0..255.0)).collect();
    Image::new(rows, cols, channels, data).unwrap()
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random unit-norm atoms as columns of a `len x m` matrix.
pub fn random_atoms(rng: &mut ChaCha8Rng, len: usize, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let v = gaussian_vec(rng, len);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

pub fn matrix_of(dict: &Dictionary) -> DMatrix<f64> {
    DMatrix::from_fn(dict.atom_len(), dict.num_atoms(), |i, j| dict.atom(j)[i])
}

pub fn submatrix(a: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), support.len(), |i, j| a[(i, support[j])])
}

/// Least squares through the normal equations, solved by LU.
pub fn normal_equations(a: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let y = DVector::from_column_slice(y);
    let gram = a.transpose() * a;
    let rhs = a.transpose() * y;
    gram.lu().solve(&rhs).expect("full-rank support").iter().copied().collect()
}

/// `||(I - A (A^T A)^-1 A^T) y||^2` with the projector formed explicitly.
pub fn explicit_residual_energy(a: &DMatrix<f64>, y: &[f64]) -> f64 {
    let y = DVector::from_column_slice(y);
    if a.ncols() == 0 {
        return y.norm_squared();
    }
    let gram_inv = (a.transpose() * a).try_inverse().expect("full-rank support");
    let projector = DMatrix::identity(a.nrows(), a.nrows()) - a * gram_inv * a.transpose();
    (projector * y).norm_squared()
}

fn combinations(m: usize, k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == k {
        out.push(current.clone());
        return;
    }
    for j in start..m {
        current.push(j);
        combinations(m, k, j + 1, current, out);
        current.pop();
    }
}

/// Every support of size at most `max_size`, in lexicographic order per size.
pub fn all_supports(m: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for k in 0..=max_size {
        combinations(m, k, 0, &mut Vec::new(), &mut out);
    }
    out
}

/// Exhaustive posterior over all supports of bounded size.
pub struct ExhaustiveMmse {
    pub supports: Vec<Vec<usize>>,
    pub posteriors: Vec<f64>,
    pub coeffs: Vec<f64>,
    pub active_probs: Vec<f64>,
}

impl ExhaustiveMmse {
    pub fn posterior_of(&self, support: &[usize]) -> f64 {
        self.supports.iter().position(|s| s == support).map_or(0.0, |i| self.posteriors[i])
    }
}

/// MMSE estimate under the projected Gaussian likelihood and an independent
/// Bernoulli prior with activity probabilities `probs`, enumerating every
/// support of size at most `max_size`.
pub fn exhaustive_mmse(a: &DMatrix<f64>, y: &[f64], sigma: f64, probs: &[f64], max_size: usize) -> ExhaustiveMmse {
    let m = a.ncols();
    let supports = all_supports(m, max_size);
    let mut logs = Vec::with_capacity(supports.len());
    let mut blue = Vec::with_capacity(supports.len());
    for s in &supports {
        let sub = submatrix(a, s);
        let energy = explicit_residual_energy(&sub, y);
        let mut log_prior = 0.0;
        for (j, &p) in probs.iter().enumerate() {
            log_prior += if s.contains(&j) { p.ln() } else { (1.0 - p).ln() };
        }
        logs.push(-energy / (2.0 * sigma * sigma) + log_prior);
        blue.push(if s.is_empty() { Vec::new() } else { normal_equations(&sub, y) });
    }
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let posteriors: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut coeffs = vec![0.0; m];
    let mut active_probs = vec![0.0; m];
    for ((s, h), &w) in supports.iter().zip(&blue).zip(&posteriors) {
        for (&j, &hj) in s.iter().zip(h) {
            coeffs[j] += w * hj;
            active_probs[j] += w;
        }
    }
    ExhaustiveMmse { supports, posteriors, coeffs, active_probs }
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// SSIM by direct summation over every 8x8 window, averaged over channels.
pub fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let (rows, cols, w) = (a.rows(), a.cols(), 8usize);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let n = (w * w) as f64;
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let mut sum = 0.0;
        let mut count = 0.0;
        for r in 0..=rows - w {
            for c in 0..=cols - w {
                let (mut ma, mut mb) = (0.0, 0.0);
                for dr in 0..w {
                    for dc in 0..w {
                        ma += a.get(ch, r + dr, c + dc);
                        mb += b.get(ch, r + dr, c + dc);
                    }
                }
                ma /= n;
                mb /= n;
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for dr in 0..w {
                    for dc in 0..w {
                        let x = a.get(ch, r + dr, c + dc) - ma;
                        let y = b.get(ch, r + dr, c + dc) - mb;
                        va += x * x;
                        vb += y * y;
                        cov += x * y;
                    }
                }
                va /= n;
                vb /= n;
                cov /= n;
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        total += sum / count;
    }
    total / a.channels() as f64
}

/// 4-connected components of the pixels where `member` holds, by breadth-first search.
pub fn bfs_components(rows: usize, cols: usize, member: impl Fn(usize, usize) -> bool) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for r0 in 0..rows {
        for c0 in 0..cols {
            if seen[r0 * cols + c0] || !member(r0, c0) {
                continue;
            }
            let mut queue = std::collections::VecDeque::from([(r0, c0)]);
            seen[r0 * cols + c0] = true;
            let mut comp = Vec::new();
            while let Some((r, c)) = queue.pop_front() {
                comp.push((r, c));
                let mut next = Vec::new();
                if r > 0 {
                    next.push((r - 1, c));
                }
                if r + 1 < rows {
                    next.push((r + 1, c));
                }
                if c > 0 {
                    next.push((r, c - 1));
                }
                if c + 1 < cols {
                    next.push((r, c + 1));
                }
                for (nr, nc) in next {
                    if !seen[nr * cols + nc] && member(nr, nc) {
                        seen[nr * cols + nc] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

/// 128x128 image of 4x4 constant 32x32 blocks.
pub fn block_image() -> Image {
    const LEVELS: [f64; 16] = [
        30.0, 200.0, 90.0, 150.0, 60.0, 230.0, 120.0, 10.0, 180.0, 45.0, 210.0, 75.0, 160.0, 100.0, 20.0, 240.0,
    ];
    Image::from_fn(128, 128, |r, c| LEVELS[(r / 32) * 4 + c / 32]).unwrap()
}

/// Pixels whose clamped 3x3 neighborhood is constant in `img`.
pub fn constant_neighborhood_mask(img: &Image) -> Vec<bool> {
    let (rows, cols) = (img.rows(), img.cols());
    let mut mask = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let v = img.get(0, r, c);
            let mut flat = true;
            for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    flat &= img.get(0, rr, cc) == v;
                }
            }
            mask[r * cols + c] = flat;
        }
    }
    mask
}

pub fn masked_mse(a: &Image, b: &Image, mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((x, y), &m) in a.data().iter().zip(b.data()).zip(mask) {
        if m {
            sum += (x - y).powi(2);
            n += 1;
        }
    }
    sum / n as f64
}
