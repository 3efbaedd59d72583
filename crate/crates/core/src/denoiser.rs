//! The denoiser: per patch size, decompose, group, solve, pool activity
//! probabilities across each group, re-solve with the pooled prior,
//! de-normalize and reconstruct; then fuse the patch sizes and post-process.
//!
//! Each scale has two barriers. Every first-pass estimate exists before any
//! pooled prior is formed, and every refined patch exists before
//! reconstruction. Work inside a phase is spread over the current rayon pool;
//! results are collected in patch order and all reductions run serially, so
//! the output does not depend on the number of threads.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dict::{build_dictionary, decorrelate, Dictionary};
use crate::error::{Error, Result};
use crate::grouping::{CorrelationIndex, GroupingParams, SearchWindow};
use crate::imgio::Image;
use crate::patching::{accumulate, decompose_plane, fuse_scales, PatchSet};
use crate::postproc::{postprocess, PostprocConfig, RhoRule};
use crate::sparse::{refine, solve, SolverParams, SparsePrior, LAMBDA_MIN};

/// Floor on a patch norm when scaling the noise level into the normalized
/// patch domain.
const NORM_FLOOR: f64 = 1e-8;

/// Every tunable of the pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiseConfig {
    /// Odd patch sizes, one denoising pass each.
    pub patch_sizes: Vec<usize>,
    /// Fusion weights per patch size; `None` is uniform.
    pub scale_weights: Option<Vec<f64>>,
    /// Minimum absolute correlation for grouping.
    pub epsilon: f64,
    /// Dictionary coherence bound.
    pub beta: f64,
    /// DCT atoms per patch as a multiple of `N^2`.
    pub overcompleteness: f64,
    pub max_neighbors: usize,
    pub search_window: SearchWindow,
    /// First-pass activity probability; `None` is `min(0.5, 2N/M)`.
    pub tap_prob: Option<f64>,
    pub beam_width: usize,
    /// Largest support; `None` is `ceil(N^2 / 2)`.
    pub max_support: Option<usize>,
    pub dominant_window: f64,
    pub lambda_min: f64,
    /// Re-solve every patch with its group's pooled prior.
    pub collaborate: bool,
    /// For color images, search neighbors across all three channels.
    pub cross_channel: bool,
    /// Noise standard deviation; `None` estimates it from the input.
    pub sigma: Option<f64>,
    pub postproc: PostprocConfig,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig {
            patch_sizes: vec![3, 5, 7, 9],
            scale_weights: None,
            epsilon: 0.3,
            beta: 0.95,
            overcompleteness: 4.0,
            max_neighbors: 256,
            search_window: SearchWindow::Auto,
            tap_prob: None,
            beam_width: 4,
            max_support: None,
            dominant_window: 1e3f64.ln(),
            lambda_min: LAMBDA_MIN,
            collaborate: true,
            cross_channel: true,
            sigma: None,
            postproc: PostprocConfig::default(),
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: expected a number, got {value:?}")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: expected an integer, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidParameter(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect()
}

fn auto_or<T>(value: &str, parse: impl Fn(&str) -> Result<T>) -> Result<Option<T>> {
    if value == "auto" || value == "estimate" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl DenoiseConfig {
    /// Fusion weights, one per patch size.
    pub fn weights(&self) -> Vec<f64> {
        match &self.scale_weights {
            Some(w) => w.clone(),
            None => vec![1.0 / self.patch_sizes.len() as f64; self.patch_sizes.len()],
        }
    }

    pub fn solver_params(&self, patch_size: usize) -> SolverParams {
        let defaults = SolverParams::for_patch_size(patch_size);
        SolverParams {
            max_support: self.max_support.unwrap_or(defaults.max_support),
            beam_width: self.beam_width,
            dominant_window: self.dominant_window,
            lambda_min: self.lambda_min,
        }
    }

    /// First-pass activity probability for an `N x N` patch and `M` atoms.
    pub fn first_pass_prob(&self, patch_size: usize, num_atoms: usize) -> f64 {
        self.tap_prob
            .unwrap_or_else(|| (2.0 * patch_size as f64 / num_atoms as f64).min(0.5))
    }

    pub fn grouping_params(&self) -> GroupingParams {
        GroupingParams {
            epsilon: self.epsilon,
            max_neighbors: self.max_neighbors,
            window: self.search_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.patch_sizes.is_empty() {
            return bad("at least one patch size is required".into());
        }
        if let Some(&n) = self.patch_sizes.iter().find(|&&n| n < 3 || n % 2 == 0) {
            return bad(format!("patch sizes must be odd and >= 3, got {n}"));
        }
        let w = self.weights();
        if w.len() != self.patch_sizes.len() {
            return bad(format!("{} fusion weights for {} patch sizes", w.len(), self.patch_sizes.len()));
        }
        if w.iter().any(|&x| x.is_nan() || x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("fusion weights must be nonnegative and sum to 1, got {w:?}"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if self.overcompleteness.is_nan() || self.overcompleteness < 1.0 {
            return bad(format!("overcompleteness must be >= 1, got {}", self.overcompleteness));
        }
        if self.max_neighbors == 0 || self.beam_width == 0 {
            return bad("max_neighbors and beam_width must be positive".into());
        }
        if let Some(p) = self.tap_prob {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("tap_prob must lie in (0, 1), got {p}"));
            }
        }
        if self.dominant_window.is_nan() || self.dominant_window < 0.0 {
            return bad(format!("dominant_window must be nonnegative, got {}", self.dominant_window));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < 0.5) {
            return bad(format!("lambda_min must lie in (0, 0.5), got {}", self.lambda_min));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("sigma must be nonnegative, got {s}"));
            }
        }
        if let Some(z) = self.postproc.zeta {
            if z.is_nan() || z < 0.0 {
                return bad(format!("zeta must be nonnegative, got {z}"));
            }
        }
        if self.postproc.min_region == 0 || !(1..=256).contains(&self.postproc.num_bins) {
            return bad("min_region must be positive and num_bins in 1..=256".into());
        }
        self.postproc.rho.validate()
    }

    /// Sets one field from its `key = value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "patch_sizes" => self.patch_sizes = parse_list(value, |s| parse_usize(key, s))?,
            "scale_weights" => self.scale_weights = auto_or(value, |v| parse_list(v, |s| parse_f64(key, s)))?,
            "epsilon" => self.epsilon = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "overcompleteness" => self.overcompleteness = parse_f64(key, value)?,
            "max_neighbors" => self.max_neighbors = parse_usize(key, value)?,
            "search_window" => {
                self.search_window = match value {
                    "auto" => SearchWindow::Auto,
                    "full" => SearchWindow::Full,
                    r => SearchWindow::Radius(parse_usize(key, r)?),
                }
            }
            "tap_prob" => self.tap_prob = auto_or(value, |v| parse_f64(key, v))?,
            "beam_width" => self.beam_width = parse_usize(key, value)?,
            "max_support" => self.max_support = auto_or(value, |v| parse_usize(key, v))?,
            "dominant_window" => self.dominant_window = parse_f64(key, value)?,
            "lambda_min" => self.lambda_min = parse_f64(key, value)?,
            "collaborate" => self.collaborate = parse_bool(key, value)?,
            "cross_channel" => self.cross_channel = parse_bool(key, value)?,
            "sigma" => self.sigma = auto_or(value, |v| parse_f64(key, v))?,
            "postproc" => self.postproc.enabled = parse_bool(key, value)?,
            "zeta" => self.postproc.zeta = auto_or(value, |v| parse_f64(key, v))?,
            "num_bins" => self.postproc.num_bins = parse_usize(key, value)?,
            "min_region" => self.postproc.min_region = parse_usize(key, value)?,
            "rho" => self.postproc.rho = parse_rho(value)?,
            other => return Err(Error::InvalidParameter(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(key, value)
                .map_err(|e| Error::Config { line: i + 1, message: e.to_string() })?;
        }
        Ok(())
    }

    /// Every field in the text form read by [`DenoiseConfig::apply_text`].
    pub fn to_text(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let window = match self.search_window {
            SearchWindow::Auto => "auto".to_string(),
            SearchWindow::Full => "full".to_string(),
            SearchWindow::Radius(r) => r.to_string(),
        };
        let rho = match &self.postproc.rho {
            RhoRule::Linear { slope, cap } => format!("linear:{slope}:{cap}"),
            RhoRule::Table(p) => {
                let pts: Vec<String> = p.iter().map(|(s, r)| format!("{s}:{r}")).collect();
                format!("table:{}", pts.join(","))
            }
        };
        let fields: [(&str, String); 20] = [
            ("patch_sizes", join(&self.patch_sizes)),
            ("scale_weights", opt(self.scale_weights.as_deref().map(join))),
            ("epsilon", self.epsilon.to_string()),
            ("beta", self.beta.to_string()),
            ("overcompleteness", self.overcompleteness.to_string()),
            ("max_neighbors", self.max_neighbors.to_string()),
            ("search_window", window),
            ("tap_prob", opt(self.tap_prob.map(|v| v.to_string()))),
            ("beam_width", self.beam_width.to_string()),
            ("max_support", opt(self.max_support.map(|v| v.to_string()))),
            ("dominant_window", self.dominant_window.to_string()),
            ("lambda_min", self.lambda_min.to_string()),
            ("collaborate", self.collaborate.to_string()),
            ("cross_channel", self.cross_channel.to_string()),
            ("sigma", self.sigma.map_or_else(|| "estimate".into(), |v| v.to_string())),
            ("postproc", self.postproc.enabled.to_string()),
            ("zeta", opt(self.postproc.zeta.map(|v| v.to_string()))),
            ("num_bins", self.postproc.num_bins.to_string()),
            ("min_region", self.postproc.min_region.to_string()),
            ("rho", rho),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// `linear:<slope>:<cap>` or `table:<sigma>:<rho2>,<sigma>:<rho2>,...`.
fn parse_rho(value: &str) -> Result<RhoRule> {
    let bad = || Error::InvalidParameter(format!("rho: cannot parse {value:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if let Some(rest) = value.strip_prefix("linear:") {
        let (slope, cap) = rest.split_once(':').ok_or_else(bad)?;
        Ok(RhoRule::Linear { slope: num(slope)?, cap: num(cap)? })
    } else if let Some(rest) = value.strip_prefix("table:") {
        let points = parse_list(rest, |p| {
            let (s, r) = p.split_once(':').ok_or_else(bad)?;
            Ok((num(s)?, num(r)?))
        })?;
        Ok(RhoRule::Table(points))
    } else {
        Err(bad())
    }
}

/// Decorrelated dictionary used for patch size `n`.
pub fn scale_dictionary(n: usize, cfg: &DenoiseConfig) -> Result<Dictionary> {
    decorrelate(&build_dictionary(n, cfg.overcompleteness)?, cfg.beta)
}

/// First-pass result of one patch: `(atom, activity probability, MMSE coefficient)`
/// for every atom with nonzero probability.
type FirstPass = Vec<(usize, f64, f64)>;

/// Per-scale output with diagnostics.
#[derive(Clone, Debug)]
pub struct ScaleReport {
    pub image: Image,
    /// Patches whose refinement failed and kept their first-pass estimate.
    pub fallbacks: usize,
    /// Mean group size during collaboration (0 without collaboration).
    pub mean_group_size: f64,
    /// Pooled priors per patch (sparse, channel-major), when requested.
    pub pooled_priors: Option<Vec<Vec<(usize, f64)>>>,
}

struct ScaleRun {
    sets: Vec<PatchSet>,
    sigma: f64,
    params: SolverParams,
}

impl ScaleRun {
    fn patch(&self, g: usize) -> (&PatchSet, usize) {
        let per = self.sets[0].count();
        (&self.sets[g / per], g % per)
    }

    fn patch_sigma(&self, g: usize) -> f64 {
        let (set, k) = self.patch(g);
        self.sigma / set.norm(k).max(NORM_FLOOR)
    }

    fn total(&self) -> usize {
        self.sets.len() * self.sets[0].count()
    }
}

fn synthesize_sparse(dict: &Dictionary, entries: impl Iterator<Item = (usize, f64)>) -> Vec<f64> {
    let mut out = vec![0.0; dict.atom_len()];
    for (j, h) in entries {
        for (o, a) in out.iter_mut().zip(dict.atom(j)) {
            *o += h * a;
        }
    }
    out
}

/// Sparse `(atom, probability)` pairs of one patch's pooled prior.
type PooledPrior = Vec<(usize, f64)>;

/// Output planes, fallback count, mean group size and recorded priors.
type ScaleOutput = (Vec<Vec<f64>>, usize, f64, Option<Vec<PooledPrior>>);

/// Denoises one patch size over one or more equally sized planes. With
/// several planes and `cross_channel`, groups span all planes.
fn run_scale(
    planes: &[&[f64]],
    rows: usize,
    cols: usize,
    n: usize,
    sigma: f64,
    cfg: &DenoiseConfig,
    record_priors: bool,
) -> Result<ScaleOutput> {
    let sets = planes
        .iter()
        .map(|p| decompose_plane(p, rows, cols, n))
        .collect::<Result<Vec<_>>>()?;
    let dict = scale_dictionary(n, cfg)?;
    let m = dict.num_atoms();
    let params = cfg.solver_params(n);
    let prior = SparsePrior::uniform(m, cfg.first_pass_prob(n, m), cfg.lambda_min)?;
    let run = ScaleRun { sets, sigma, params };

    // phase 1: independent first-pass estimates
    let first: Vec<FirstPass> = (0..run.total())
        .into_par_iter()
        .map(|g| {
            let (set, k) = run.patch(g);
            let est = solve(&dict, set.vector(k), run.patch_sigma(g), &prior, &run.params)?;
            Ok(est
                .active_probs
                .iter()
                .zip(&est.coeffs)
                .enumerate()
                .filter(|(_, (&p, _))| p > 0.0)
                .map(|(j, (&p, &h))| (j, p, h))
                .collect())
        })
        .collect::<Result<_>>()?;

    let first_estimate = |g: usize| synthesize_sparse(&dict, first[g].iter().map(|&(j, _, h)| (j, h)));

    // phase 2: pool priors over each group and re-solve
    let (estimates, fallbacks, mean_group, priors): ScaleOutput =
        if cfg.collaborate {
            let refs: Vec<&PatchSet> = run.sets.iter().collect();
            let index = CorrelationIndex::new(&refs)?;
            let gparams = cfg.grouping_params();
            let per = run.sets[0].count();
            let results: Vec<(Vec<f64>, bool, usize, Option<PooledPrior>)> = (0..run.total())
                .into_par_iter()
                .map(|g| {
                    let only = if cfg.cross_channel { None } else { Some(g / per) };
                    let group = index.neighbors(g, &gparams, only)?;
                    let mut pooled = vec![0.0; m];
                    for (&member, &w) in group.members.iter().zip(&group.weights) {
                        for &(j, p, _) in &first[member] {
                            pooled[j] += w * p;
                        }
                    }
                    let recorded = record_priors.then(|| {
                        pooled.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(j, &p)| (j, p)).collect()
                    });
                    let (set, k) = run.patch(g);
                    Ok(match refine(&dict, set.vector(k), run.patch_sigma(g), &pooled, &run.params) {
                        Ok(est) => (dict.synthesize(&est.coeffs), false, group.len(), recorded),
                        Err(_) => (first_estimate(g), true, group.len(), recorded),
                    })
                })
                .collect::<Result<_>>()?;
            let fallbacks = results.iter().filter(|r| r.1).count();
            let mean_group = results.iter().map(|r| r.2 as f64).sum::<f64>() / results.len() as f64;
            let priors = record_priors.then(|| results.iter().map(|r| r.3.clone().unwrap_or_default()).collect());
            (results.into_iter().map(|r| r.0).collect(), fallbacks, mean_group, priors)
        } else {
            ((0..run.total()).into_par_iter().map(first_estimate).collect(), 0, 0.0, None)
        };

    // de-normalize and place back
    let per = run.sets[0].count();
    let mut out = Vec::with_capacity(planes.len());
    for (s, set) in run.sets.iter().enumerate() {
        let mut raw = Vec::with_capacity(per * set.vector_len());
        for k in 0..per {
            raw.extend(set.denormalize(k, &estimates[s * per + k]));
        }
        out.push(accumulate(&raw, rows, cols, n)?);
    }
    Ok((out, fallbacks, mean_group, priors))
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("noise sigma must be positive, got {sigma}")))
    }
}

/// One patch size, with diagnostics. Multi-channel images follow the color
/// pipeline (see [`denoise_color`]).
pub fn denoise_single_scale_report(
    img: &Image,
    patch_size: usize,
    sigma: f64,
    cfg: &DenoiseConfig,
    record_priors: bool,
) -> Result<ScaleReport> {
    check_sigma(sigma)?;
    let planes: Vec<&[f64]> = (0..img.channels()).map(|c| img.plane(c)).collect();
    let (out, fallbacks, mean_group_size, pooled_priors) =
        run_scale(&planes, img.rows(), img.cols(), patch_size, sigma, cfg, record_priors)?;
    let image = Image::new(img.rows(), img.cols(), img.channels(), out.concat())?;
    Ok(ScaleReport { image, fallbacks, mean_group_size, pooled_priors })
}

/// Denoises with a single patch size and no post-processing.
pub fn denoise_single_scale(img: &Image, patch_size: usize, sigma: f64, cfg: &DenoiseConfig) -> Result<Image> {
    Ok(denoise_single_scale_report(img, patch_size, sigma, cfg, false)?.image)
}

/// Noise level the pipeline runs with: the configured one, or an estimate.
pub fn effective_sigma(img: &Image, cfg: &DenoiseConfig) -> f64 {
    cfg.sigma.unwrap_or_else(|| estimate_sigma(img))
}

/// Denoiser output before post-processing: every configured patch size,
/// fused with the configured weights.
pub fn denoise_fused(img: &Image, cfg: &DenoiseConfig) -> Result<Image> {
    cfg.validate()?;
    let sigma = effective_sigma(img, cfg);
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut images = Vec::new();
    let mut weights = Vec::new();
    for (&n, w) in cfg.patch_sizes.iter().zip(cfg.weights()) {
        if w == 0.0 {
            continue;
        }
        images.push(denoise_single_scale(img, n, sigma, cfg)?);
        weights.push(w);
    }
    fuse_scales(&images, &weights)
}

/// Full pipeline: multi-scale denoising, fusion and post-processing.
/// Three-channel images use the cross-channel color pipeline.
pub fn denoise(img: &Image, cfg: &DenoiseConfig) -> Result<Image> {
    let fused = denoise_fused(img, cfg)?;
    let sigma = effective_sigma(img, cfg);
    if sigma == 0.0 {
        return Ok(fused);
    }
    postprocess(&fused, sigma, &cfg.postproc)
}

/// Color pipeline: patches of every channel are grouped together (unless
/// `cross_channel` is off), pooled priors mix channels, and refinement and
/// reconstruction stay per channel.
pub fn denoise_color(img: &Image, cfg: &DenoiseConfig) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::InvalidParameter(format!(
            "color denoising needs 3 channels, got {}",
            img.channels()
        )));
    }
    denoise(img, cfg)
}

/// Group sizes of every patch of a multi-channel image at one patch size,
/// with groups spanning all channels or confined to the anchor's channel.
pub fn group_sizes(img: &Image, patch_size: usize, cfg: &DenoiseConfig, cross_channel: bool) -> Result<Vec<usize>> {
    let sets = (0..img.channels())
        .map(|c| decompose_plane(img.plane(c), img.rows(), img.cols(), patch_size))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PatchSet> = sets.iter().collect();
    let index = CorrelationIndex::new(&refs)?;
    let params = cfg.grouping_params();
    let per = sets[0].count();
    (0..index.len())
        .into_par_iter()
        .map(|g| {
            let only = if cross_channel { None } else { Some(g / per) };
            Ok(index.neighbors(g, &params, only)?.len())
        })
        .collect()
}

/// Robust noise estimate: median absolute finest-scale diagonal Haar detail
/// over 2x2 blocks, divided by 0.6745. Pools every channel.
pub fn estimate_sigma(img: &Image) -> f64 {
    let (rows, cols) = (img.rows(), img.cols());
    let mut details = Vec::with_capacity(img.channels() * (rows / 2) * (cols / 2));
    for ch in 0..img.channels() {
        let p = img.plane(ch);
        for r in (0..rows.saturating_sub(1)).step_by(2) {
            for c in (0..cols.saturating_sub(1)).step_by(2) {
                let (a, b) = (p[r * cols + c], p[r * cols + c + 1]);
                let (d, e) = (p[(r + 1) * cols + c], p[(r + 1) * cols + c + 1]);
                details.push(((a - b - d + e) / 2.0).abs());
            }
        }
    }
    if details.is_empty() {
        return 0.0;
    }
    let mid = details.len() / 2;
    details.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if details.len() % 2 == 1 {
        details[mid]
    } else {
        let upper = details[mid];
        let lower = details[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    median / 0.6745
}
