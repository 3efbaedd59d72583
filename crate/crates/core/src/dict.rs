//! Overcomplete DCT + Haar dictionary and coherence-based column pruning.

use crate::error::{Error, Result};
use crate::imgio::Image;

/// Which family an atom comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomKind {
    Dct,
    Wavelet,
}

/// Unit-norm atoms of length `N^2`, stored atom by atom in the project-wide
/// column-major patch order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    patch_size: usize,
    atoms: Vec<f64>,
    kinds: Vec<AtomKind>,
}

impl Dictionary {
    /// Builds a dictionary from explicit atoms; every atom is normalized to
    /// unit length. Zero atoms are rejected.
    pub fn from_atoms(patch_size: usize, atoms: Vec<Vec<f64>>, kinds: Vec<AtomKind>) -> Result<Self> {
        let len = patch_size * patch_size;
        if atoms.len() != kinds.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} atoms but {} kind tags",
                atoms.len(),
                kinds.len()
            )));
        }
        let mut flat = Vec::with_capacity(atoms.len() * len);
        for atom in atoms {
            if atom.len() != len {
                return Err(Error::DimensionMismatch(format!(
                    "atom of length {} in a dictionary of length {len}",
                    atom.len()
                )));
            }
            let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidParameter("dictionary atom has zero norm".into()));
            }
            flat.extend(atom.iter().map(|v| v / norm));
        }
        Ok(Dictionary { patch_size, atoms: flat, kinds })
    }

    /// Dictionary whose atom length is `len` without a square patch shape;
    /// used for synthetic solver problems.
    pub fn from_columns(len: usize, atoms: Vec<Vec<f64>>) -> Result<Self> {
        let side = (len as f64).sqrt().round() as usize;
        let kinds = vec![AtomKind::Dct; atoms.len()];
        if side * side == len {
            Dictionary::from_atoms(side, atoms, kinds)
        } else {
            Err(Error::InvalidParameter(format!("atom length {len} is not a square")))
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn atom_len(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn num_atoms(&self) -> usize {
        self.kinds.len()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        let len = self.atom_len();
        &self.atoms[j * len..(j + 1) * len]
    }

    pub fn kind(&self, j: usize) -> AtomKind {
        self.kinds[j]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks(self.atom_len())
    }

    /// `A h` for a dense coefficient vector.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.atom_len()];
        for (atom, &h) in self.atoms().zip(coeffs) {
            if h != 0.0 {
                for (o, a) in out.iter_mut().zip(atom) {
                    *o += h * a;
                }
            }
        }
        out
    }

    /// Largest absolute inner product between distinct atoms.
    pub fn coherence(&self) -> f64 {
        let m = self.num_atoms();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in i + 1..m {
                worst = worst.max(dot(self.atom(i), self.atom(j)).abs());
            }
        }
        worst
    }

    /// Tiles every atom, rescaled to `[0, 255]`, into a grayscale sheet with a
    /// one-pixel gutter.
    pub fn contact_sheet(&self) -> Image {
        let n = self.patch_size;
        let m = self.num_atoms().max(1);
        let per_row = (m as f64).sqrt().ceil() as usize;
        let grid_rows = m.div_ceil(per_row);
        let cell = n + 1;
        let (rows, cols) = (grid_rows * cell + 1, per_row * cell + 1);
        let mut data = vec![0.0; rows * cols];
        for (j, atom) in self.atoms().enumerate() {
            let lo = atom.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = atom.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let (gr, gc) = (j / per_row, j % per_row);
            for dc in 0..n {
                for dr in 0..n {
                    let v = (atom[dc * n + dr] - lo) / span * 255.0;
                    data[(gr * cell + 1 + dr) * cols + gc * cell + 1 + dc] = v;
                }
            }
        }
        Image::new(rows, cols, 1, data).expect("contact sheet dimensions are consistent")
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// 1D DCT-II vector of frequency `k` on a grid of `freqs` frequencies.
fn dct_1d(n: usize, freqs: usize, k: usize) -> Vec<f64> {
    (0..n)
        .map(|t| (std::f64::consts::PI * (t as f64 + 0.5) * k as f64 / freqs as f64).cos())
        .collect()
}

/// Number of 1D DCT frequencies per axis for a given overcompleteness.
pub fn dct_frequencies(patch_size: usize, overcompleteness: f64) -> usize {
    // the 1e-9 keeps exact squares such as sqrt(4) * 5 from rounding up
    (overcompleteness.sqrt() * patch_size as f64 - 1e-9).ceil() as usize
}

fn dct_atoms(n: usize, freqs: usize) -> Vec<Vec<f64>> {
    let basis: Vec<Vec<f64>> = (0..freqs).map(|k| dct_1d(n, freqs, k)).collect();
    let mut atoms = Vec::with_capacity(freqs * freqs);
    for col_freq in &basis {
        for row_freq in &basis {
            let mut atom = Vec::with_capacity(n * n);
            for &cv in col_freq {
                for &rv in row_freq {
                    atom.push(rv * cv);
                }
            }
            atoms.push(atom);
        }
    }
    atoms
}

/// Haar detail atoms (horizontal, vertical, diagonal) on every `b x b` block
/// of the non-overlapping tiling anchored at the top-left corner, for each
/// block size `b = 2, 4, ...` not exceeding `n`. Atoms are zero outside their
/// block.
fn haar_atoms(n: usize) -> Vec<Vec<f64>> {
    let mut atoms = Vec::new();
    let mut b = 2;
    while b <= n {
        let half = b / 2;
        for br in (0..=n - b).step_by(b) {
            for bc in (0..=n - b).step_by(b) {
                for pattern in 0..3 {
                    let mut atom = vec![0.0; n * n];
                    for dc in 0..b {
                        for dr in 0..b {
                            let top = dr < half;
                            let left = dc < half;
                            let sign = match pattern {
                                0 => left,
                                1 => top,
                                _ => top == left,
                            };
                            atom[(bc + dc) * n + br + dr] = if sign { 1.0 } else { -1.0 };
                        }
                    }
                    atoms.push(atom);
                }
            }
        }
        b *= 2;
    }
    atoms
}

/// Overcomplete 2D DCT atoms followed by 2D Haar detail atoms, all unit norm.
pub fn build_dictionary(patch_size: usize, overcompleteness: f64) -> Result<Dictionary> {
    if patch_size < 3 || patch_size.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "patch size must be odd and >= 3, got {patch_size}"
        )));
    }
    if !(overcompleteness >= 1.0 && overcompleteness.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "overcompleteness must be >= 1, got {overcompleteness}"
        )));
    }
    let freqs = dct_frequencies(patch_size, overcompleteness);
    let dct = dct_atoms(patch_size, freqs);
    let haar = haar_atoms(patch_size);
    let mut kinds = vec![AtomKind::Dct; dct.len()];
    kinds.extend(std::iter::repeat_n(AtomKind::Wavelet, haar.len()));
    let mut atoms = dct;
    atoms.extend(haar);
    Dictionary::from_atoms(patch_size, atoms, kinds)
}

/// Greedy keep-first pruning: scanning atoms in order, an atom is dropped if
/// its absolute inner product with any previously kept atom exceeds `beta`.
pub fn decorrelate(dict: &Dictionary, beta: f64) -> Result<Dictionary> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..dict.num_atoms() {
        let atom = dict.atom(j);
        if kept.iter().all(|&i| dot(dict.atom(i), atom).abs() <= beta) {
            kept.push(j);
        }
    }
    let len = dict.atom_len();
    let mut atoms = Vec::with_capacity(kept.len() * len);
    for &j in &kept {
        atoms.extend_from_slice(dict.atom(j));
    }
    Ok(Dictionary {
        patch_size: dict.patch_size,
        atoms,
        kinds: kept.iter().map(|&j| dict.kinds[j]).collect(),
    })
}
