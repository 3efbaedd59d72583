//! Image container, binary PGM/PPM I/O, AWGN injection and quality metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Peak intensity used by PSNR and SSIM.
pub const PEAK: f64 = 255.0;

/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// A real-valued image with one or three channels.
///
/// Samples are stored planar: channel `c` occupies
/// `data[c * rows * cols..(c + 1) * rows * cols]`, row-major within the plane.
/// Values are nominally in `[0, 255]` but are never clamped until
/// [`save_image`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "image dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != rows * cols * channels {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols}x{channels} image needs {} samples, got {}",
                rows * cols * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("image contains non-finite samples".into()));
        }
        Ok(Image { rows, cols, channels, data })
    }

    /// Constant-valued image.
    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(rows, cols, channels, vec![value; rows * cols * channels])
    }

    /// Single-channel image from a per-pixel function of `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Image::new(rows, cols, 1, data)
    }

    /// Stacks single-channel planes into one multi-channel image.
    pub fn from_planes(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidParameter("no planes given".into()))?;
        let mut data = Vec::with_capacity(first.pixel_count() * planes.len());
        for p in planes {
            if p.channels != 1 || p.rows != first.rows || p.cols != first.cols {
                return Err(Error::DimensionMismatch(
                    "planes must be single-channel and equally sized".into(),
                ));
            }
            data.extend_from_slice(&p.data);
        }
        Image::new(first.rows, first.cols, planes.len(), data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.rows, self.cols, self.channels, other.rows, other.cols, other.channels
            )))
        }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.rows + row) * self.cols + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.rows + row) * self.cols + col] = value;
    }

    /// Samples of one channel plane.
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.pixel_count();
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Copies one channel out as a single-channel image.
    pub fn channel(&self, channel: usize) -> Image {
        Image {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data: self.plane(channel).to_vec(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population variance over every sample.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.data.len() as f64
    }

    /// Crops a rectangle from every channel.
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Result<Image> {
        if rows == 0 || cols == 0 || row + rows > self.rows || col + cols > self.cols {
            return Err(Error::InvalidParameter(format!(
                "crop {rows}x{cols} at ({row},{col}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(rows * cols * self.channels);
        for ch in 0..self.channels {
            for r in row..row + rows {
                for c in col..col + cols {
                    data.push(self.get(ch, r, c));
                }
            }
        }
        Image::new(rows, cols, self.channels, data)
    }

    /// Mean squared error against another image of the same shape.
    pub fn mse(&self, other: &Image) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / self.data.len() as f64)
    }

    pub(crate) fn with_data(&self, data: Vec<f64>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        Image { rows: self.rows, cols: self.cols, channels: self.channels, data }
    }
}

/// How strong the injected noise is.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseLevel {
    /// Noise standard deviation in gray levels.
    Sigma(f64),
    /// Signal-to-noise ratio `10 log10(var(X) / sigma^2)`.
    SnrDb(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn sigma(sigma: f64, seed: u64) -> Self {
        NoiseSpec { level: NoiseLevel::Sigma(sigma), seed }
    }

    pub fn snr_db(snr_db: f64, seed: u64) -> Self {
        NoiseSpec { level: NoiseLevel::SnrDb(snr_db), seed }
    }

    /// The noise standard deviation this spec yields on `img`.
    pub fn resolve_sigma(&self, img: &Image) -> Result<f64> {
        match self.level {
            NoiseLevel::Sigma(s) if s >= 0.0 && s.is_finite() => Ok(s),
            NoiseLevel::Sigma(s) => Err(Error::InvalidParameter(format!(
                "sigma must be a nonnegative finite number, got {s}"
            ))),
            NoiseLevel::SnrDb(db) => {
                if !db.is_finite() {
                    return Err(Error::InvalidParameter(format!("snr_db must be finite, got {db}")));
                }
                let var = img.variance();
                if var <= 0.0 {
                    return Err(Error::ConstantImage);
                }
                Ok(sigma_for_snr(var.sqrt(), db))
            }
        }
    }
}

/// Noise standard deviation that gives `snr_db` on a signal with standard
/// deviation `signal_std`.
pub fn sigma_for_snr(signal_std: f64, snr_db: f64) -> f64 {
    signal_std * 10f64.powf(-snr_db / 20.0)
}

/// SNR in dB of noise level `sigma` on a signal with standard deviation
/// `signal_std`. Infinite for `sigma == 0`.
pub fn snr_for_sigma(signal_std: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (signal_std / sigma).log10()
    }
}

/// Adds i.i.d. zero-mean Gaussian noise. The output is not clamped.
pub fn add_awgn(img: &Image, spec: &NoiseSpec) -> Result<Image> {
    let sigma = spec.resolve_sigma(img)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let data = img.data.iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(img.with_data(data))
}

/// Peak signal-to-noise ratio in dB with peak 255. Returns `f64::INFINITY`
/// for identical images.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    let mse = reference.mse(test)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Mean single-scale SSIM over every 8x8 window position, averaged across
/// channels. Local statistics use uniform weights (population moments).
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    let (rows, cols) = (reference.rows, reference.cols);
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { rows, cols, window: SSIM_WINDOW });
    }
    let total: f64 = (0..reference.channels)
        .map(|ch| ssim_plane(reference.plane(ch), test.plane(ch), rows, cols))
        .sum();
    Ok(total / reference.channels as f64)
}

/// Summed-area table with a zero first row and column.
fn integral(values: impl Iterator<Item = f64>, rows: usize, cols: usize) -> Vec<f64> {
    let stride = cols + 1;
    let mut table = vec![0.0; (rows + 1) * stride];
    let mut values = values;
    for r in 0..rows {
        let mut line = 0.0;
        for c in 0..cols {
            line += values.next().unwrap_or(0.0);
            table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + line;
        }
    }
    table
}

fn ssim_plane(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let sa = integral(a.iter().copied(), rows, cols);
    let sb = integral(b.iter().copied(), rows, cols);
    let saa = integral(a.iter().map(|v| v * v), rows, cols);
    let sbb = integral(b.iter().map(|v| v * v), rows, cols);
    let sab = integral(a.iter().zip(b).map(|(x, y)| x * y), rows, cols);

    let stride = cols + 1;
    let w = SSIM_WINDOW;
    let n = (w * w) as f64;
    let boxed = |t: &[f64], r: usize, c: usize| {
        t[(r + w) * stride + c + w] - t[r * stride + c + w] - t[(r + w) * stride + c]
            + t[r * stride + c]
    };

    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - w {
        for c in 0..=cols - w {
            let mu_a = boxed(&sa, r, c) / n;
            let mu_b = boxed(&sb, r, c) / n;
            let var_a = (boxed(&saa, r, c) / n - mu_a * mu_a).max(0.0);
            let var_b = (boxed(&sbb, r, c) / n - mu_b * mu_b).max(0.0);
            let cov = boxed(&sab, r, c) / n - mu_a * mu_b;
            sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Reads a binary PGM (P5) or PPM (P6) file with maxval 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes)
}

/// Writes a binary PGM (one channel) or PPM (three channels). Samples are
/// rounded to the nearest integer and clamped to `[0, 255]`.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(img);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    let n = img.pixel_count();
    out.reserve(n * img.channels);
    for i in 0..n {
        for ch in 0..img.channels {
            out.push(quantize(img.data[ch * n + i]));
        }
    }
    out
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::MalformedHeader("expected magic P5 or P6".into())),
    };
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    let cols = cursor.number("width")? as usize;
    let rows = cursor.number("height")? as usize;
    let maxval = cursor.number("maxval")?;
    if rows == 0 || cols == 0 {
        return Err(Error::MalformedHeader(format!("zero dimension {cols}x{rows}")));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte separates maxval from the body
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
    }
    let body = &bytes[cursor.pos..];
    let n = rows * cols;
    let expected = n * channels;
    if body.len() < expected {
        return Err(Error::MalformedBody { expected, found: body.len() });
    }
    let mut data = vec![0.0; expected];
    for i in 0..n {
        for ch in 0..channels {
            data[ch * n + i] = f64::from(body[i * channels + ch]);
        }
    }
    Image::new(rows, cols, channels, data)
}
