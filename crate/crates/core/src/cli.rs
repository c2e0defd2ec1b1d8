//! Command-line entry point.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use crate::backend::{RecordingBackend, VelocityBackend, VelocityTrace};
use crate::editor::{run, EditMode, StepRecord};
use crate::error::{Error, Result};
use crate::field::{decompose, Grid, KernelSpec};
use crate::io::config::{BackendSpec, RunConfig};
use crate::io::{load_image, save_image, ImageFormat};
use crate::mask::{rasterize_mask, Layout};
use crate::schedule::derive_seed;
use crate::selftest;

#[derive(Debug, Parser)]
#[command(
    name = "flowforge",
    version,
    about = "Rectified-flow image editing with velocity adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Edit images with per-step velocity adaptation.
    Edit(EditArgs),
    /// Edit images with the plain noise-free path.
    Flowedit(EditArgs),
    /// Write low- and high-frequency parts of images.
    Decompose(DecomposeArgs),
    /// Write the latent-resolution mask of a layout.
    Maskview(MaskviewArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Edit one image and record every velocity evaluation.
    Record(EditArgs),
    /// Edit one image from a recorded trace, or list a trace.
    Replay(ReplayArgs),
    /// Run the oracle suites.
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Flowedit,
    Driveflow,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Ppm,
    Png,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Ppm => ImageFormat::Ppm,
            FormatArg::Png => ImageFormat::Png,
        }
    }
}

#[derive(Debug, Default, Args)]
struct EditArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input image (repeatable).
    #[arg(short, long = "input")]
    inputs: Vec<PathBuf>,
    /// Box layout JSON, one per input (repeatable).
    #[arg(short, long = "layout")]
    layouts: Vec<PathBuf>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,

    /// point_mass, linear, remote or replay.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    mu_src: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    mu_tar: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    scale_src: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    scale_tar: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    bias_src: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    bias_tar: Option<f64>,
    #[arg(long)]
    texture_seed: Option<u64>,
    #[arg(long)]
    texture_amplitude: Option<f64>,
    /// Remote backend HOST:PORT.
    #[arg(long)]
    address: Option<String>,
    /// Trace to replay (replay backend) or to write (`record`).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Check recorded times and latent hashes during replay.
    #[arg(long)]
    strict: bool,
    /// Also record velocity evaluations to this file.
    #[arg(long)]
    record: Option<PathBuf>,

    #[arg(long)]
    source_prompt: Option<String>,
    #[arg(long)]
    target_prompt: Option<String>,
    /// Editing variant for `record` and `replay`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Number of time intervals T.
    #[arg(long)]
    steps: Option<usize>,
    /// First editing step N_max.
    #[arg(long)]
    n_max: Option<usize>,
    /// Noise pairings averaged per step.
    #[arg(long)]
    n_avg: Option<usize>,
    /// Inner adaptation iterations per step.
    #[arg(long)]
    n_inner: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    no_line_search: bool,
    #[arg(long)]
    lambda_obj: Option<f64>,
    #[arg(long)]
    lambda_div: Option<f64>,
    #[arg(long)]
    lambda_bg: Option<f64>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mask_dilation: Option<usize>,
    /// Codec downsampling factor.
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    latent_channels: Option<usize>,

    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// Keep decoded values outside [0, 1] (also writes <stem>.image.vtrc).
    #[arg(long)]
    no_clamp: bool,
    /// Write the edited latent as <stem>.latent.vtrc.
    #[arg(long)]
    dump_latent: bool,
    /// Record step wall-clock times in the logs.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    verbosity: Option<String>,
    /// Validate and print the plan without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[command(flatten)]
    edit: EditArgs,
    /// Print the trace records instead of editing.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    /// Image or VTRC tensor file (repeatable).
    #[arg(short, long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long, default_value = "out")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 5)]
    kernel_size: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct MaskviewArgs {
    #[arg(short, long)]
    layout: PathBuf,
    #[arg(short, long, default_value = "out")]
    output_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    factor: usize,
    /// Write at image resolution instead of latent resolution.
    #[arg(long)]
    upsample: bool,
    #[arg(long, value_enum, default_value = "ppm")]
    format: FormatArg,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
    #[arg(long, default_value_t = 50)]
    coords: usize,
    #[arg(long)]
    dry_run: bool,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dry_run: bool,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Edit(a) => edit(a, Some(EditMode::Driveflow), Variant::Edit),
        Command::Flowedit(a) => edit(a, Some(EditMode::Flowedit), Variant::Edit),
        Command::Record(a) => edit(a, None, Variant::Record),
        Command::Replay(a) if a.list => list_trace(&a.edit),
        Command::Replay(a) => edit(a.edit, None, Variant::Replay),
        Command::Decompose(a) => decompose_cmd(&a),
        Command::Maskview(a) => maskview(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Selftest(a) => selftest_cmd(&a),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Variant {
    Edit,
    Record,
    Replay,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn mismatch(flag: &str, backend: &BackendSpec) -> Error {
    config_err(format!("--{flag} does not apply to the {} backend", backend.kind()))
}

fn apply_backend_flags(a: &EditArgs, backend: &mut BackendSpec) -> Result<()> {
    if let Some(kind) = &a.backend {
        if kind != backend.kind() {
            *backend = BackendSpec::for_kind(kind)?;
        }
    }
    let set = |slot: &mut f64, v: Option<f64>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    match backend {
        BackendSpec::PointMass { mu_src, mu_tar } => {
            set(mu_src, a.mu_src);
            set(mu_tar, a.mu_tar);
        }
        BackendSpec::Linear {
            scale_src,
            scale_tar,
            bias_src,
            bias_tar,
            texture_seed,
            texture_amplitude,
        } => {
            set(scale_src, a.scale_src);
            set(scale_tar, a.scale_tar);
            set(bias_src, a.bias_src);
            set(bias_tar, a.bias_tar);
            set(texture_amplitude, a.texture_amplitude);
            if let Some(s) = a.texture_seed {
                *texture_seed = s;
            }
        }
        BackendSpec::Remote { address, .. } => {
            if let Some(addr) = &a.address {
                address.clone_from(addr);
            }
        }
        BackendSpec::Replay { trace, strict } => {
            if let Some(t) = &a.trace {
                trace.clone_from(t);
            }
            *strict |= a.strict;
        }
    }
    let point_mass = matches!(backend, BackendSpec::PointMass { .. });
    let linear = matches!(backend, BackendSpec::Linear { .. });
    let flags: [(&str, bool, bool); 10] = [
        ("mu-src", a.mu_src.is_some(), point_mass),
        ("mu-tar", a.mu_tar.is_some(), point_mass),
        ("scale-src", a.scale_src.is_some(), linear),
        ("scale-tar", a.scale_tar.is_some(), linear),
        ("bias-src", a.bias_src.is_some(), linear),
        ("bias-tar", a.bias_tar.is_some(), linear),
        ("texture-seed", a.texture_seed.is_some(), linear),
        ("texture-amplitude", a.texture_amplitude.is_some(), linear),
        (
            "address",
            a.address.is_some(),
            matches!(backend, BackendSpec::Remote { .. }),
        ),
        ("strict", a.strict, matches!(backend, BackendSpec::Replay { .. })),
    ];
    match flags.iter().find(|(_, given, applies)| *given && !applies) {
        Some((flag, _, _)) => Err(mismatch(flag, backend)),
        None => Ok(()),
    }
}

/// Merges the config file (or defaults) with the flags.
fn resolve_config(a: &EditArgs, forced_mode: Option<EditMode>, variant: Variant) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !a.inputs.is_empty() {
        cfg.inputs.clone_from(&a.inputs);
    }
    if !a.layouts.is_empty() {
        cfg.layouts.clone_from(&a.layouts);
    }
    if let Some(o) = &a.output_dir {
        cfg.output_dir.clone_from(o);
    }
    let mut a_backend = EditArgs {
        trace: a.trace.clone(),
        ..EditArgs::default()
    };
    match variant {
        Variant::Replay => {
            if a.trace.is_none() && !matches!(cfg.backend, BackendSpec::Replay { .. }) {
                return Err(config_err("replay needs --trace"));
            }
            a_backend.backend = Some("replay".into());
        }
        Variant::Record => {
            let trace = a.trace.clone().ok_or_else(|| config_err("record needs --trace"))?;
            cfg.trace_record = Some(trace);
            a_backend.trace = None;
        }
        Variant::Edit => {}
    }
    let merged = EditArgs {
        backend: a_backend.backend.or_else(|| a.backend.clone()),
        trace: a_backend.trace,
        mu_src: a.mu_src,
        mu_tar: a.mu_tar,
        scale_src: a.scale_src,
        scale_tar: a.scale_tar,
        bias_src: a.bias_src,
        bias_tar: a.bias_tar,
        texture_seed: a.texture_seed,
        texture_amplitude: a.texture_amplitude,
        address: a.address.clone(),
        strict: a.strict,
        ..EditArgs::default()
    };
    if variant == Variant::Replay && a.backend.as_deref().is_some_and(|b| b != "replay") {
        return Err(config_err("replay always uses the replay backend"));
    }
    if variant == Variant::Record && a.trace.is_some() && a.backend.as_deref() == Some("replay") {
        return Err(config_err("record cannot use the replay backend"));
    }
    apply_backend_flags(&merged, &mut cfg.backend)?;
    if let Some(p) = &a.record {
        cfg.trace_record = Some(p.clone());
    }

    if let Some(s) = &a.source_prompt {
        cfg.prompts.source.clone_from(s);
    }
    if let Some(s) = &a.target_prompt {
        cfg.prompts.target.clone_from(s);
    }
    let e = &mut cfg.edit;
    match (forced_mode, a.mode) {
        (Some(_), Some(_)) => return Err(config_err("--mode only applies to record and replay")),
        (Some(m), None) => e.mode = m,
        (None, Some(ModeArg::Flowedit)) => e.mode = EditMode::Flowedit,
        (None, Some(ModeArg::Driveflow)) => e.mode = EditMode::Driveflow,
        (None, None) => {}
    }
    macro_rules! take {
        ($flag:expr, $slot:expr) => {
            if let Some(v) = $flag {
                $slot = v;
            }
        };
    }
    take!(a.steps, e.steps);
    take!(a.n_max, e.n_max);
    take!(a.n_avg, e.n_avg);
    take!(a.n_inner, e.adapt.n_inner);
    take!(a.step_size, e.adapt.step_size);
    take!(a.lambda_obj, e.weights.obj);
    take!(a.lambda_div, e.weights.div);
    take!(a.lambda_bg, e.weights.bg);
    take!(a.kernel_size, e.kernel.size);
    take!(a.sigma, e.kernel.sigma);
    take!(a.seed, e.seed);
    take!(a.mask_dilation, e.mask_dilation);
    if a.no_line_search {
        e.adapt.line_search = false;
    }
    take!(a.factor, cfg.codec.factor);
    take!(a.latent_channels, cfg.codec.latent_channels);
    take!(a.threads, cfg.threads);
    take!(a.verbosity.clone(), cfg.verbosity);
    if a.no_clamp {
        cfg.clamp = false;
    }
    cfg.dump_latent |= a.dump_latent;
    cfg.timing |= a.timing;
    Ok(cfg)
}

struct ItemPaths {
    image: PathBuf,
    log: PathBuf,
    latent: Option<PathBuf>,
    raw_image: Option<PathBuf>,
}

fn item_paths(cfg: &RunConfig, input: &Path) -> Result<ItemPaths> {
    let stem = input
        .file_stem()
        .ok_or_else(|| config_err(format!("input {} has no file name", input.display())))?
        .to_string_lossy()
        .into_owned();
    let format = ImageFormat::from_path(input);
    let out = |suffix: &str| cfg.output_dir.join(format!("{stem}{suffix}"));
    let paths = ItemPaths {
        image: out(&format!(".{}", format.extension())),
        log: out(".jsonl"),
        latent: cfg.dump_latent.then(|| out(".latent.vtrc")),
        raw_image: (!cfg.clamp).then(|| out(".image.vtrc")),
    };
    if same_file(&paths.image, input) {
        return Err(config_err(format!("output would overwrite input {}", input.display())));
    }
    Ok(paths)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn apply_verbosity(cfg: &RunConfig) {
    if std::env::var_os("FLOWFORGE_LOG").is_none() {
        if let Ok(level) = cfg.verbosity.parse::<log::LevelFilter>() {
            log::set_max_level(level);
        }
    }
}

fn edit(a: EditArgs, forced_mode: Option<EditMode>, variant: Variant) -> Result<i32> {
    let cfg = resolve_config(&a, forced_mode, variant)?;
    cfg.validate()?;
    apply_verbosity(&cfg);
    let plans = cfg
        .inputs
        .iter()
        .map(|p| item_paths(&cfg, p))
        .collect::<Result<Vec<_>>>()?;

    if a.dry_run {
        println!(
            "plan: {} input(s), mode {:?}, backend {}, {} worker(s)",
            cfg.inputs.len(),
            cfg.edit.mode,
            cfg.backend.kind(),
            cfg.worker_count().min(cfg.inputs.len())
        );
        for (input, p) in cfg.inputs.iter().zip(&plans) {
            println!("  {} -> {}, {}", input.display(), p.image.display(), p.log.display());
        }
        if let Some(t) = &cfg.trace_record {
            println!("  trace -> {}", t.display());
        }
        println!("{}", cfg.to_json());
        return Ok(0);
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| config_err(format!("worker pool: {e}")))?;
    let results: Vec<Result<()>> = pool.install(|| {
        (0..cfg.inputs.len())
            .into_par_iter()
            .map(|i| process_item(&cfg, i, &plans[i]))
            .collect()
    });

    let mut first: Option<Error> = None;
    for (input, r) in cfg.inputs.iter().zip(results) {
        match r {
            Ok(()) => info!("edited {}", input.display()),
            Err(e) => {
                eprintln!("error: {}: {e}", input.display());
                first.get_or_insert(e);
            }
        }
    }
    match first {
        Some(e) => Ok(e.exit_code()),
        None => Ok(0),
    }
}

fn log_line(record: &StepRecord, timing: bool) -> String {
    let mut record = record.clone();
    if !timing {
        record.micros = 0;
    }
    serde_json::to_string(&record).expect("step records serialize")
}

fn process_item(cfg: &RunConfig, index: usize, paths: &ItemPaths) -> Result<()> {
    let input = &cfg.inputs[index];
    let image = load_image(input)?;
    let layout = match cfg.layouts.get(index) {
        Some(p) => Layout::load(p)?,
        None => Layout::empty(image.width(), image.height()),
    };
    if (layout.image_width, layout.image_height) != (image.width(), image.height()) {
        return Err(config_err(format!(
            "layout is for {}x{} but {} is {}x{}",
            layout.image_width,
            layout.image_height,
            input.display(),
            image.width(),
            image.height()
        )));
    }
    let (backend, z0) = cfg.backend.open_for_image(&image, cfg.codec, &cfg.prompts)?;
    let mut edit_cfg = cfg.edit.clone();
    edit_cfg.seed = derive_seed(cfg.edit.seed, index as u64);

    let mut log = String::new();
    let mut observer = |r: &StepRecord, _: &Grid| {
        let _ = writeln!(log, "{}", log_line(r, cfg.timing));
    };
    let mut backend: Box<dyn VelocityBackend + Send> = backend;
    let (latent, trace) = if cfg.trace_record.is_some() {
        let mut rec = RecordingBackend::new(backend);
        let out = run(&z0, &layout, &mut rec, &cfg.prompts, &edit_cfg, &mut observer)?;
        let (inner, trace) = rec.into_parts();
        backend = inner;
        (out.latent, Some(trace))
    } else {
        let out = run(&z0, &layout, &mut backend, &cfg.prompts, &edit_cfg, &mut observer)?;
        (out.latent, None)
    };

    let decoded = backend.decode(&latent)?;
    let shown = if cfg.clamp {
        decoded.clamp(0.0, 1.0)
    } else {
        decoded.clone()
    };
    save_image(&paths.image, &shown)?;
    std::fs::write(&paths.log, log)?;
    if let Some(p) = &paths.latent {
        VelocityTrace::single(&latent).save(p)?;
    }
    if let Some(p) = &paths.raw_image {
        VelocityTrace::single(&decoded).save(p)?;
    }
    if let (Some(path), Some(trace)) = (&cfg.trace_record, trace) {
        trace.save(path)?;
    }
    Ok(())
}

fn list_trace(a: &EditArgs) -> Result<i32> {
    let path = a.trace.as_ref().ok_or_else(|| config_err("--list needs --trace"))?;
    if !path.is_file() {
        return Err(config_err(format!("trace {} does not exist", path.display())));
    }
    let trace = VelocityTrace::load(path)?;
    println!("{}: {} record(s)", path.display(), trace.len());
    for r in trace.records() {
        println!(
            "  step {:>4} {} t={} shape {} |v|={:.6e}",
            r.step,
            r.branch,
            r.t,
            r.velocity.shape(),
            r.velocity.norm()
        );
    }
    Ok(0)
}

fn load_grid(path: &Path) -> Result<Grid> {
    if path.extension().is_some_and(|e| e == "vtrc") {
        let trace = VelocityTrace::load(path)?;
        let first = trace
            .records()
            .first()
            .ok_or_else(|| Error::parse(0, format!("{} holds no tensor", path.display())))?;
        Ok(first.velocity.clone())
    } else {
        load_image(path)
    }
}

fn decompose_cmd(a: &DecomposeArgs) -> Result<i32> {
    let kernel = KernelSpec {
        size: a.kernel_size,
        sigma: a.sigma,
    }
    .build()
    .map_err(|e| config_err(e.to_string()))?;
    for p in &a.inputs {
        if !p.is_file() {
            return Err(config_err(format!("input {} does not exist", p.display())));
        }
    }
    for input in &a.inputs {
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let raw = input.extension().is_some_and(|e| e == "vtrc");
        let ext = if raw {
            "vtrc"
        } else {
            ImageFormat::from_path(input).extension()
        };
        let low_path = a.output_dir.join(format!("{stem}.low.{ext}"));
        let high_path = a.output_dir.join(format!("{stem}.high.{ext}"));
        if a.dry_run {
            println!("{} -> {}, {}", input.display(), low_path.display(), high_path.display());
            continue;
        }
        let grid = load_grid(input)?;
        let split = decompose(&grid, &kernel);
        std::fs::create_dir_all(&a.output_dir)?;
        if raw {
            VelocityTrace::single(&split.low).save(&low_path)?;
            VelocityTrace::single(&split.high).save(&high_path)?;
        } else {
            save_image(&low_path, &split.low)?;
            save_image(&high_path, &split.high.map(|v| v + 0.5))?;
        }
    }
    Ok(0)
}

fn maskview(a: &MaskviewArgs) -> Result<i32> {
    if !a.layout.is_file() {
        return Err(config_err(format!("layout {} does not exist", a.layout.display())));
    }
    if a.factor == 0 {
        return Err(config_err("--factor must be positive"));
    }
    let layout = Layout::load(&a.layout)?;
    let (w, h) = (layout.image_width, layout.image_height);
    if w % a.factor != 0 || h % a.factor != 0 {
        return Err(config_err(format!(
            "image size {w}x{h} is not divisible by factor {}",
            a.factor
        )));
    }
    let (lh, lw) = (h / a.factor, w / a.factor);
    let stem = a
        .layout
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let format = ImageFormat::from(a.format);
    let out = a.output_dir.join(format!("{stem}.mask.{}", format.extension()));
    if a.dry_run {
        println!("{} ({lh}x{lw} cells) -> {}", a.layout.display(), out.display());
        return Ok(0);
    }
    let mask = rasterize_mask(&layout, lh, lw)?;
    let (oh, ow, f) = if a.upsample { (h, w, a.factor) } else { (lh, lw, 1) };
    let img = Grid::from_fn(crate::field::Shape::new(3, oh, ow), |_, y, x| {
        if mask.get(y / f, x / f) {
            1.0
        } else {
            0.0
        }
    })?;
    std::fs::create_dir_all(&a.output_dir)?;
    save_image(&out, &img)?;
    println!("{}: {} of {} cells set", out.display(), mask.count_ones(), lh * lw);
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if a.instances == 0 || a.coords == 0 {
        return Err(config_err("--instances and --coords must be positive"));
    }
    if a.dry_run {
        println!(
            "gradcheck: {} instances x {} coordinates, h = {:e}, seed {}",
            a.instances,
            a.coords,
            selftest::GRADCHECK_H,
            a.seed
        );
        return Ok(0);
    }
    let r = selftest::gradcheck_suite(a.instances, a.coords, a.seed, selftest::GRADCHECK_TOL);
    println!("max relative error: {:.6e}", r.worst);
    println!("{r}");
    if r.passed() {
        Ok(0)
    } else {
        warn!("gradient check exceeded {:e}", selftest::GRADCHECK_TOL);
        Ok(5)
    }
}

fn selftest_cmd(a: &SelftestArgs) -> Result<i32> {
    if a.dry_run {
        println!("selftest: 8 suites, seed {}", a.seed);
        return Ok(0);
    }
    let reports = selftest::run_all(a.seed);
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    println!("{} of {} suites passed", reports.len() - failed, reports.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
