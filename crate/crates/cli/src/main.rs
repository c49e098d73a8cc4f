//! Command-line pipeline: schedule analysis, phantom generation, training,
//! inpainting, evaluation and benchmarking.
//!
//! Every subcommand takes `--seed` where randomness is involved; identical
//! flags and seeds reproduce identical artifacts (wall-clock columns of the
//! benchmark CSV excepted). Domain failures exit 1 with a diagnostic;
//! usage errors exit 2.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wdiff3d::denoiser::{load_checkpoint, save_checkpoint, DenoiserConfig};
use wdiff3d::metrics::{compute_report, MetricReport, SsimParams};
use wdiff3d::phantom::{gen_phantom, PhantomSpec};
use wdiff3d::sampler::{inpaint, InpaintSample, SamplerConfig};
use wdiff3d::schedule::{
    build_schedule, export_curves, perturbation_report, Schedule, ScheduleKind, ScheduleParams,
    VpForm,
};
use wdiff3d::training::{train_loop, write_history_csv, LossKind, TrainConfig};
use wdiff3d::volume::{load_volume, normalize, save_volume, MaskVolume, NormRecord};
use wdiff3d::wavelet::DEFAULT_COEFF_SCALE;

#[derive(Parser)]
#[command(name = "wdiff3d", version, about = "3D wavelet-diffusion inpainting pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Export beta / alpha-bar curves for a variance schedule and print a
    /// perturbation summary.
    Schedule(ScheduleArgs),
    /// Generate synthetic g/m/v volume triplets plus a manifest CSV.
    MakePhantoms(MakePhantomsArgs),
    /// Train a denoiser on a phantom manifest and write a checkpoint.
    Train(TrainArgs),
    /// Inpaint one voided volume with a trained checkpoint.
    Inpaint(InpaintArgs),
    /// SSIM/MSE/PSNR of a prediction against ground truth.
    Eval(EvalArgs),
    /// Median inpainting wall-time across a list of step counts.
    Bench(BenchArgs),
}

/// Schedule selection shared by several subcommands.
#[derive(Args, Clone)]
struct ScheduleOpts {
    /// Schedule kind: l, la or vp.
    #[arg(long, default_value = "vp")]
    kind: String,
    /// Number of diffusion steps T.
    #[arg(long = "T", value_name = "N")]
    num_steps: usize,
    /// First beta of the linear families.
    #[arg(long = "beta1")]
    beta_first: Option<f64>,
    /// Last beta of the linear families.
    #[arg(long = "betaT")]
    beta_last: Option<f64>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    beta_max: Option<f64>,
    /// VP exponent form: t-independent or literal.
    #[arg(long)]
    vp_form: Option<String>,
}

impl ScheduleOpts {
    fn to_params(&self) -> Result<ScheduleParams> {
        let kind = ScheduleKind::from_str(&self.kind)?;
        let mut params = ScheduleParams::new(kind, self.num_steps);
        if let Some(v) = self.beta_first {
            params.beta_first = v;
        }
        if let Some(v) = self.beta_last {
            params.beta_last = v;
        }
        if let Some(v) = self.beta_min {
            params.beta_min = v;
        }
        if let Some(v) = self.beta_max {
            params.beta_max = v;
        }
        if let Some(v) = &self.vp_form {
            params.vp_form = VpForm::from_str(v)?;
        }
        Ok(params)
    }
}

#[derive(Args)]
struct ScheduleArgs {
    #[command(flatten)]
    schedule: ScheduleOpts,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakePhantomsArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Cube edge length (even).
    #[arg(long, default_value_t = 32)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    mask_radius_min: usize,
    #[arg(long, default_value_t = 6)]
    mask_radius_max: usize,
    /// Percentile clipped on each side during normalization.
    #[arg(long, default_value_t = 0.005)]
    pct: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Manifest CSV produced by make-phantoms.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional loss-history CSV path.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Optional key=value config file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long = "T", value_name = "N")]
    num_steps: Option<usize>,
    #[arg(long)]
    vp_form: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    coeff_scale: Option<f32>,
    /// Loss kind: l2 or l1.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    hidden_channels: Option<usize>,
    #[arg(long)]
    hidden_convs: Option<usize>,
    #[arg(long)]
    time_embed_dim: Option<usize>,
}

#[derive(Args)]
struct InpaintArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Voided input volume (FW3D).
    #[arg(long = "in")]
    input: PathBuf,
    /// Mask volume (FW3D, binary).
    #[arg(long)]
    mask: PathBuf,
    /// Output volume path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    schedule: ScheduleOpts,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Return the raw model reconstruction instead of compositing the
    /// known region from the input.
    #[arg(long)]
    no_composite: bool,
    /// Optional image-space clamp on the clean prediction.
    #[arg(long)]
    clamp_x0: Option<f32>,
    #[arg(long, default_value_t = DEFAULT_COEFF_SCALE)]
    coeff_scale: f32,
    /// Normalize the input with this percentile first and map the output
    /// back to the input range. Without it, inputs are assumed to already
    /// lie in [-1, 1].
    #[arg(long)]
    renormalize_pct: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction volume.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth volume.
    #[arg(long)]
    gt: PathBuf,
    /// Optional mask; adds a masked-region row.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output CSV path (report is also printed).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data range; defaults to max(gt) - min(gt).
    #[arg(long)]
    data_range: Option<f64>,
    #[arg(long, default_value_t = 7)]
    window: usize,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Comma-separated list of step counts, e.g. 2,4,8.
    #[arg(long = "T", value_name = "LIST")]
    steps_list: String,
    /// Runs per step count; the median is reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Optional CSV output path (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "vp")]
    kind: String,
    #[arg(long)]
    vp_form: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_COEFF_SCALE)]
    coeff_scale: f32,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Schedule(args) => cmd_schedule(args),
        Command::MakePhantoms(args) => cmd_make_phantoms(args),
        Command::Train(args) => cmd_train(args),
        Command::Inpaint(args) => cmd_inpaint(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_schedule(args: ScheduleArgs) -> Result<()> {
    let params = args.schedule.to_params()?;
    let schedule = build_schedule(&params)?;
    export_curves(std::slice::from_ref(&schedule), &args.out)?;
    let report = perturbation_report(&schedule);
    println!(
        "kind={} T={} alpha_bar_final={:e} fully_perturbed={} first_step_below_1pct={}",
        params.kind,
        params.num_steps,
        report.alpha_bar_final,
        report.fully_perturbed,
        report
            .first_step_below_1pct
            .map_or_else(|| "none".to_string(), |t| t.to_string()),
    );
    println!("curves written to {}", args.out.display());
    Ok(())
}

fn cmd_make_phantoms(args: MakePhantomsArgs) -> Result<()> {
    if args.count == 0 {
        bail!("count must be >= 1");
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let manifest_path = args.out.join("manifest.csv");
    let mut manifest = String::from("id,seed,g_path,m_path,v_path\n");
    for i in 0..args.count {
        let seed = args.seed + i as u64;
        let mut spec = PhantomSpec::new(seed);
        spec.dims = (args.dims, args.dims, args.dims);
        spec.mask_radius_min = args.mask_radius_min;
        spec.mask_radius_max = args.mask_radius_max;
        spec.norm_pct = args.pct;
        let sample = gen_phantom(&spec)
            .with_context(|| format!("generating phantom {i} (seed {seed})"))?;
        let names = [
            format!("phantom_{i:03}_g.fw3d"),
            format!("phantom_{i:03}_m.fw3d"),
            format!("phantom_{i:03}_v.fw3d"),
        ];
        save_volume(
            sample.ground_truth().expect("generated with ground truth"),
            &args.out.join(&names[0]),
        )?;
        save_volume(sample.mask().as_volume(), &args.out.join(&names[1]))?;
        save_volume(sample.voided(), &args.out.join(&names[2]))?;
        manifest.push_str(&format!(
            "{i},{seed},{},{},{}\n",
            names[0], names[1], names[2]
        ));
    }
    fs::write(&manifest_path, manifest)?;
    println!(
        "wrote {} phantom triplets and {}",
        args.count,
        manifest_path.display()
    );
    Ok(())
}

/// Flat `key = value` file; `#` starts a comment.
fn read_kv_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn kv_get<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("config key '{key}': {e}")),
    }
}

fn load_manifest(path: &Path) -> Result<Vec<InpaintSample>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            bail!("{}:{}: expected 5 fields", path.display(), lineno + 1);
        }
        let g = load_volume(&base.join(fields[2]))?;
        let m = MaskVolume::from_volume(load_volume(&base.join(fields[3]))?)?;
        let v = load_volume(&base.join(fields[4]))?;
        samples.push(InpaintSample::new(Some(g), m, v, NormRecord::identity())?);
    }
    if samples.is_empty() {
        bail!("manifest {} lists no samples", path.display());
    }
    Ok(samples)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kv = match &args.config {
        Some(path) => read_kv_config(path)?,
        None => BTreeMap::new(),
    };
    // flags override config values, which override defaults
    let kind: String = args
        .kind
        .or(kv_get(&kv, "kind")?)
        .unwrap_or_else(|| "vp".to_string());
    let num_steps: usize = args.num_steps.or(kv_get(&kv, "T")?).unwrap_or(2);
    let steps: usize = args.steps.or(kv_get(&kv, "steps")?).unwrap_or(2000);

    let mut schedule_params = ScheduleParams::new(ScheduleKind::from_str(&kind)?, num_steps);
    if let Some(form) = args.vp_form.or(kv_get(&kv, "vp-form")?) {
        schedule_params.vp_form = VpForm::from_str(&form)?;
    }

    let mut cfg = TrainConfig::new(schedule_params, steps);
    if let Some(v) = args.batch_size.or(kv_get(&kv, "batch-size")?) {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr.or(kv_get(&kv, "lr")?) {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.seed.or(kv_get(&kv, "seed")?) {
        cfg.seed = v;
    }
    if let Some(v) = args.coeff_scale.or(kv_get(&kv, "coeff-scale")?) {
        cfg.coeff_scale = v;
    }
    if let Some(loss) = args.loss.or(kv_get(&kv, "loss")?) {
        cfg.loss_kind = match loss.as_str() {
            "l2" | "squared" => LossKind::SquaredError,
            "l1" | "absolute" => LossKind::AbsoluteError,
            other => bail!("unknown loss '{other}' (expected l2 or l1)"),
        };
    }
    let mut dcfg = DenoiserConfig::default();
    if let Some(v) = args.hidden_channels.or(kv_get(&kv, "hidden-channels")?) {
        dcfg.hidden_channels = v;
        dcfg.time_embed_dim = v;
    }
    if let Some(v) = args.hidden_convs.or(kv_get(&kv, "hidden-convs")?) {
        dcfg.num_hidden_convs = v;
    }
    if let Some(v) = args.time_embed_dim.or(kv_get(&kv, "time-embed-dim")?) {
        dcfg.time_embed_dim = v;
    }
    cfg.denoiser = dcfg;

    let dataset = load_manifest(&args.data)?;
    println!(
        "training on {} samples: kind={} T={} steps={} batch={} lr={} seed={}",
        dataset.len(),
        cfg.schedule.kind,
        cfg.schedule.num_steps,
        cfg.steps,
        cfg.batch_size,
        cfg.learning_rate,
        cfg.seed
    );
    let started = Instant::now();
    let out = train_loop(&dataset, &cfg)?;
    let elapsed = started.elapsed();
    save_checkpoint(&out.model, &args.out)?;
    if let Some(history_path) = &args.history {
        write_history_csv(&out.history, history_path)?;
    }
    let (first, last) = match (out.history.first(), out.history.last()) {
        (Some(f), Some(l)) => (f.total, l.total),
        _ => (f64::NAN, f64::NAN),
    };
    println!(
        "done in {elapsed:?}: loss {first:.5} -> {last:.5}; checkpoint {}",
        args.out.display()
    );
    Ok(())
}

fn load_inpaint_input(
    input: &Path,
    mask: &Path,
    renormalize_pct: Option<f64>,
) -> Result<InpaintSample> {
    let v_raw = load_volume(input)?;
    let m = MaskVolume::from_volume(load_volume(mask)?)?;
    let (v, rec) = match renormalize_pct {
        Some(pct) => normalize(&v_raw, pct)?,
        None => (v_raw, NormRecord::identity()),
    };
    Ok(InpaintSample::new(None, m, v, rec)?)
}

fn cmd_inpaint(args: InpaintArgs) -> Result<()> {
    let model = load_checkpoint(&args.model)?;
    let sample = load_inpaint_input(&args.input, &args.mask, args.renormalize_pct)?;
    let schedule = build_schedule(&args.schedule.to_params()?)?;
    let cfg = SamplerConfig {
        composite_known_region: !args.no_composite,
        clamp_x0: args.clamp_x0,
        coeff_scale: args.coeff_scale,
        seed: args.seed,
    };
    let started = Instant::now();
    let out = inpaint(&model, &sample, &schedule, &cfg)?;
    let elapsed = started.elapsed();
    save_volume(&out, &args.out)?;
    println!(
        "inpainted {} in {elapsed:?} -> {}",
        args.input.display(),
        args.out.display()
    );
    Ok(())
}

fn format_report(volume_id: &str, r: &MetricReport) -> String {
    format!(
        "{volume_id},{},{},{},{},{}",
        r.region, r.ssim, r.mse, r.psnr, r.data_range
    )
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred = load_volume(&args.pred)?;
    let gt = load_volume(&args.gt)?;
    let mask = args
        .mask
        .as_ref()
        .map(|p| -> Result<MaskVolume> { Ok(MaskVolume::from_volume(load_volume(p)?)?) })
        .transpose()?;
    let params = SsimParams {
        window: args.window,
        sigma: args.sigma,
    };
    let volume_id = args
        .pred
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "prediction".to_string());

    let mut lines = vec!["volume_id,region,ssim,mse,psnr,data_range".to_string()];
    let whole = compute_report(&gt, &pred, None, args.data_range, &params)?;
    lines.push(format_report(&volume_id, &whole));
    if let Some(m) = &mask {
        let masked = compute_report(&gt, &pred, Some(m), args.data_range, &params)?;
        lines.push(format_report(&volume_id, &masked));
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.runs == 0 {
        bail!("runs must be >= 1");
    }
    let model = load_checkpoint(&args.model)?;
    let sample = load_inpaint_input(&args.input, &args.mask, None)?;
    let steps: Vec<usize> = args
        .steps_list
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("parsing --T list"))
        .collect::<Result<_>>()?;
    if steps.is_empty() {
        bail!("--T list is empty");
    }

    let mut lines = vec!["T,runs,median_seconds,min_seconds,max_seconds".to_string()];
    for &t_total in &steps {
        let mut params = ScheduleParams::new(ScheduleKind::from_str(&args.kind)?, t_total);
        if let Some(form) = &args.vp_form {
            params.vp_form = VpForm::from_str(form)?;
        }
        let schedule: Schedule = build_schedule(&params)?;
        let mut times: Vec<f64> = (0..args.runs)
            .map(|run| -> Result<f64> {
                let cfg = SamplerConfig {
                    coeff_scale: args.coeff_scale,
                    seed: args.seed + run as u64,
                    ..SamplerConfig::default()
                };
                let t0 = Instant::now();
                let out = inpaint(&model, &sample, &schedule, &cfg)?;
                let dt = t0.elapsed().as_secs_f64();
                // keep the result alive so the timing covers the full call
                let _ = out.len();
                Ok(dt)
            })
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        lines.push(format!(
            "{t_total},{},{median},{},{}",
            args.runs,
            times[0],
            times[times.len() - 1]
        ));
    }
    let text = lines.join("\n") + "\n";
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text)?;
    }
    Ok(())
}
