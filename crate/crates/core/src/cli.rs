//! Command-line front end: `corrupt`, `denoise`, `metrics` and `bench`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::denoiser::{denoise, denoise_single_scale, effective_sigma, DenoiseConfig};
use crate::error::{Error, Result};
use crate::imgio::{add_awgn, load_image, psnr, save_image, snr_for_sigma, ssim, Image, NoiseSpec};
use crate::postproc::{postprocess_detailed, BinPartition};

/// Columns of a metrics row.
pub const CSV_HEADER: &str = "image,sigma,snr_db,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised";

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "C2DF_THREADS";

#[derive(Parser, Debug)]
#[command(name = "c2df", version, about = "Collaborative sparse-recovery image denoiser")]
struct Cli {
    /// Worker threads (falls back to C2DF_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add seeded white Gaussian noise to an image.
    Corrupt(CorruptArgs),
    /// Denoise an image.
    Denoise(DenoiseArgs),
    /// Print PSNR and SSIM of a test image against a reference.
    Metrics(MetricsArgs),
    /// Run a manifest of images and noise levels and write a CSV report.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct CorruptArgs {
    input: PathBuf,
    /// Noise standard deviation.
    #[arg(long, conflicts_with = "snr_db", required_unless_present = "snr_db")]
    sigma: Option<f64>,
    /// Noise level as a signal-to-noise ratio in dB of the input.
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    seed: u64,
    /// Output image; defaults to `<input stem>_noisy.<ext>` in the current directory.
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// key = value file of configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated odd patch sizes, e.g. `3,5,7,9`.
    #[arg(long, value_delimiter = ',')]
    patch_sizes: Option<Vec<usize>>,
    /// Grouping threshold on the absolute patch correlation.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Atom coherence above which dictionary columns are pruned.
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed flat-region threshold; derived from the residual noise otherwise.
    #[arg(long)]
    zeta: Option<f64>,
    /// Most neighbors pooled per patch.
    #[arg(long)]
    max_neighbors: Option<usize>,
    /// Skip flat-region post-processing.
    #[arg(long)]
    no_postproc: bool,
    /// Skip the collaborative refinement pass.
    #[arg(long)]
    no_collab: bool,
}

impl ConfigFlags {
    fn build(&self) -> Result<DenoiseConfig> {
        let mut cfg = DenoiseConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text)?;
        }
        if let Some(p) = &self.patch_sizes {
            // weights from a file only make sense for the file's own sizes
            if cfg.scale_weights.as_ref().is_some_and(|w| w.len() != p.len()) {
                cfg.scale_weights = None;
            }
            cfg.patch_sizes = p.clone();
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.zeta {
            cfg.postproc.zeta = Some(v);
        }
        if let Some(v) = self.max_neighbors {
            cfg.max_neighbors = v;
        }
        if self.no_postproc {
            cfg.postproc.enabled = false;
        }
        if self.no_collab {
            cfg.collaborate = false;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    input: PathBuf,
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
    /// Noise standard deviation of the input.
    #[arg(long, conflicts_with = "estimate_sigma", required_unless_present = "estimate_sigma")]
    sigma: Option<f64>,
    /// Estimate the noise level from the input.
    #[arg(long)]
    estimate_sigma: bool,
    /// Clean image; prints a metrics row when given.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Also write the flat mask and per-bin masks next to the output.
    #[arg(long)]
    dump_masks: bool,
    /// Also write each patch size's image next to the output.
    #[arg(long)]
    dump_scales: bool,
    #[command(flatten)]
    config: ConfigFlags,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    reference: PathBuf,
    test: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    manifest: PathBuf,
    /// Output directory; overrides the manifest's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = match resolve_threads(cli.threads, std::env::var(THREADS_ENV).ok().as_deref()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Corrupt(a) => cmd_corrupt(a),
        Command::Denoise(a) => cmd_denoise(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Bench(a) => cmd_bench(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    let threads = match (flag, env) {
        (Some(t), _) => Some(t),
        (None, Some(v)) if !v.trim().is_empty() => Some(
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be an integer, got {v:?}")))?,
        ),
        _ => None,
    };
    if threads == Some(0) {
        return Err(Error::InvalidParameter("thread count must be positive".into()));
    }
    Ok(threads)
}

fn noise_spec(sigma: Option<f64>, snr_db: Option<f64>, seed: u64) -> Result<NoiseSpec> {
    match (sigma, snr_db) {
        (Some(s), None) => Ok(NoiseSpec::sigma(s, seed)),
        (None, Some(d)) => Ok(NoiseSpec::snr_db(d, seed)),
        _ => Err(Error::InvalidParameter("give exactly one of sigma and snr_db".into())),
    }
}

fn sidecar_path(image: &Path) -> PathBuf {
    let mut name = image.file_name().unwrap_or_default().to_os_string();
    name.push(".noise.txt");
    image.with_file_name(name)
}

fn cmd_corrupt(a: &CorruptArgs) -> Result<i32> {
    let img = load_image(&a.input)?;
    let spec = noise_spec(a.sigma, a.snr_db, a.seed)?;
    let sigma = spec.resolve_sigma(&img)?;
    let noisy = add_awgn(&img, &spec)?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => {
            let stem = a.input.file_stem().unwrap_or_default().to_string_lossy();
            let ext = a.input.extension().map_or("pgm".into(), |e| e.to_string_lossy());
            PathBuf::from(format!("{stem}_noisy.{ext}"))
        }
    };
    save_image(&noisy, &out)?;
    let snr = snr_for_sigma(img.variance().sqrt(), sigma);
    let sidecar = sidecar_path(&out);
    let text = format!("sigma = {sigma}\nsnr_db = {snr}\nseed = {}\n", a.seed);
    fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))?;
    println!("sigma = {sigma:.6}, snr_db = {snr:.4}");
    Ok(0)
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// One metrics row in [`CSV_HEADER`] order.
pub fn metrics_row(name: &str, sigma: f64, clean: &Image, noisy: &Image, denoised: &Image) -> Result<String> {
    let snr = snr_for_sigma(clean.variance().sqrt(), sigma);
    Ok(format!(
        "{name},{sigma:.6},{snr:.6},{},{},{},{}",
        fmt_metric(psnr(clean, noisy)?),
        fmt_metric(psnr(clean, denoised)?),
        fmt_metric(ssim(clean, noisy)?),
        fmt_metric(ssim(clean, denoised)?),
    ))
}

fn with_suffix(out: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn dump_masks(fused: &Image, sigma: f64, cfg: &DenoiseConfig, out: &Path) -> Result<()> {
    let detail = postprocess_detailed(fused, sigma, &cfg.postproc)?;
    save_image(&detail.mask.to_image(), with_suffix(out, "flatmask", "pgm"))?;
    write_bin_masks(&detail.bins, out)
}

fn write_bin_masks(bins: &BinPartition, out: &Path) -> Result<()> {
    let channels = bins.channels();
    for ch in 0..channels {
        for b in 0..bins.num_bins() {
            if bins.members(ch, b).is_empty() {
                continue;
            }
            let tag = if channels == 1 { format!("bin{b:02}") } else { format!("c{ch}_bin{b:02}") };
            save_image(&bins.bin_mask(ch, b), with_suffix(out, &tag, "pgm"))?;
        }
    }
    Ok(())
}

fn cmd_denoise(a: &DenoiseArgs) -> Result<i32> {
    let noisy = load_image(&a.input)?;
    let mut cfg = a.config.build()?;
    cfg.sigma = if a.estimate_sigma { None } else { a.sigma };
    cfg.validate()?;
    let sigma = effective_sigma(&noisy, &cfg);
    cfg.sigma = Some(sigma);

    let denoised = denoise(&noisy, &cfg)?;
    save_image(&denoised, &a.out)?;

    if (a.dump_scales || a.dump_masks) && sigma > 0.0 {
        let mut scales = Vec::new();
        for &n in &cfg.patch_sizes {
            let img = denoise_single_scale(&noisy, n, sigma, &cfg)?;
            if a.dump_scales {
                save_image(&img, with_suffix(&a.out, &format!("n{n}"), extension_for(&img)))?;
            }
            scales.push(img);
        }
        if a.dump_masks {
            let fused = crate::patching::fuse_scales(&scales, &cfg.weights())?;
            dump_masks(&fused, sigma, &cfg, &a.out)?;
        }
    }

    if let Some(reference) = &a.reference {
        let clean = load_image(reference)?;
        println!("{CSV_HEADER}");
        println!("{}", metrics_row(&display_name(&a.input), sigma, &clean, &noisy, &denoised)?);
    }
    Ok(0)
}

fn extension_for(img: &Image) -> &'static str {
    if img.channels() == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

fn display_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn cmd_metrics(a: &MetricsArgs) -> Result<i32> {
    let reference = load_image(&a.reference)?;
    let test = load_image(&a.test)?;
    println!("psnr,ssim");
    println!("{},{}", fmt_metric(psnr(&reference, &test)?), fmt_metric(ssim(&reference, &test)?));
    Ok(0)
}

/// A bench manifest: images crossed with noise levels.
#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub images: Vec<PathBuf>,
    /// Noise levels as `(sigma, snr_db)`, exactly one of which is set.
    pub levels: Vec<(Option<f64>, Option<f64>)>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub emit_images: bool,
    pub emit_masks: bool,
    pub emit_scales: bool,
    pub config: DenoiseConfig,
}

impl RunManifest {
    /// Parses manifest text. Relative image and output paths resolve
    /// against `base`. Keys: `image`, `sigma`, `snr_db` (each may repeat),
    /// `seed`, `out`, `emit_images`, `emit_masks`, `emit_scales`, and any
    /// configuration field.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut m = RunManifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let number = |v: &str| v.parse::<f64>().map_err(|_| err(format!("{key}: bad number {v:?}")));
            let flag = |v: &str| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(err(format!("{key}: expected true or false, got {v:?}"))),
            };
            match key {
                "image" => m.images.push(base.join(value)),
                "sigma" => m.levels.push((Some(number(value)?), None)),
                "snr_db" => m.levels.push((None, Some(number(value)?))),
                "seed" => m.seed = value.parse().map_err(|_| err(format!("seed: bad integer {value:?}")))?,
                "out" => m.out = Some(base.join(value)),
                "emit_images" => m.emit_images = flag(value)?,
                "emit_masks" => m.emit_masks = flag(value)?,
                "emit_scales" => m.emit_scales = flag(value)?,
                _ => m.config.set(key, value).map_err(|e| err(e.to_string()))?,
            }
        }
        if m.images.is_empty() || m.levels.is_empty() {
            return Err(Error::InvalidParameter("manifest needs at least one image and one noise level".into()));
        }
        m.config.validate()?;
        Ok(m)
    }
}

/// Header of the bench report: the metrics columns plus status and timing.
pub const BENCH_HEADER: &str = "image,sigma,snr_db,psnr_noisy,psnr_denoised,ssim_noisy,ssim_denoised,status,wall_secs";

fn bench_row(m: &RunManifest, image: &Path, level: (Option<f64>, Option<f64>), out_dir: &Path) -> Result<String> {
    let clean = load_image(image)?;
    let spec = noise_spec(level.0, level.1, m.seed)?;
    let sigma = spec.resolve_sigma(&clean)?;
    let noisy = add_awgn(&clean, &spec)?;
    let cfg = DenoiseConfig { sigma: Some(sigma), ..m.config.clone() };
    let denoised = denoise(&noisy, &cfg)?;

    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    let tag = format!("{stem}_s{sigma:.3}");
    let ext = extension_for(&clean);
    let base = out_dir.join(format!("{tag}.{ext}"));
    if m.emit_images {
        save_image(&noisy, with_suffix(&base, "noisy", ext))?;
        save_image(&denoised, with_suffix(&base, "denoised", ext))?;
    }
    if (m.emit_scales || m.emit_masks) && sigma > 0.0 {
        let mut scales = Vec::new();
        for &n in &cfg.patch_sizes {
            let img = denoise_single_scale(&noisy, n, sigma, &cfg)?;
            if m.emit_scales {
                save_image(&img, with_suffix(&base, &format!("n{n}"), ext))?;
            }
            scales.push(img);
        }
        if m.emit_masks {
            dump_masks(&crate::patching::fuse_scales(&scales, &cfg.weights())?, sigma, &cfg, &base)?;
        }
    }
    metrics_row(&display_name(image), sigma, &clean, &noisy, &denoised)
}

/// Runs every (image, level) pair in manifest order and writes
/// `bench.csv` into `out_dir`. Returns the report and whether any row failed.
pub fn run_bench(m: &RunManifest, out_dir: &Path) -> Result<(String, bool)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv = String::new();
    let _ = writeln!(csv, "{BENCH_HEADER}");
    let mut failed = false;
    for image in &m.images {
        for &level in &m.levels {
            let start = Instant::now();
            let row = bench_row(m, image, level, out_dir);
            let secs = start.elapsed().as_secs_f64();
            match row {
                Ok(r) => {
                    let _ = writeln!(csv, "{r},ok,{secs:.3}");
                }
                Err(e) => {
                    failed = true;
                    eprintln!("error: {}: {e}", image.display());
                    let sigma = level.0.map_or(String::new(), |s| format!("{s:.6}"));
                    let snr = level.1.map_or(String::new(), |s| format!("{s:.6}"));
                    let _ = writeln!(csv, "{},{sigma},{snr},,,,,error,{secs:.3}", display_name(image));
                }
            }
        }
    }
    let path = out_dir.join("bench.csv");
    fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    Ok((csv, failed))
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let manifest = RunManifest::parse(&text, base)?;
    let out = a
        .out
        .clone()
        .or_else(|| manifest.out.clone())
        .ok_or_else(|| Error::InvalidParameter("no output directory: pass --out or set out in the manifest".into()))?;
    let (csv, failed) = run_bench(&manifest, &out)?;
    print!("{csv}");
    Ok(i32::from(failed))
}
