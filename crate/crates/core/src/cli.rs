//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or I/O error, 3 failed check.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::autodiff::Mode;
use crate::checks::{gradcheck_suite, GRADCHECK_TOLERANCE};
use crate::data::{
    self, dataset_root, gen_synthetic, load_samples, LoadOptions, Manifest, Selection, Split,
    SynthConfig, Template,
};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model::{self, MCPNetConfig, Model, WidthFactor, DEFAULT_KERNEL_LENGTHS};
use crate::sketchio::{
    extract_unlabeled, load_sketch, load_strokes, perturb, prepare, CategorySpec, SketchImage,
    DEFAULT_CANVAS,
};
use crate::train::{fit, Reduction, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mcpnet",
    version,
    about = "Semantic segmentation of raster sketches"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Center, thin and sample one sketch, or fill the point cache of a dataset
    Preprocess(PreprocessArgs),
    /// Generate a labeled synthetic corpus
    GenSynthetic(GenArgs),
    /// Train a model on the train split of a dataset
    Train(TrainArgs),
    /// Score models on a dataset split
    Eval(EvalArgs),
    /// Label the strokes of one sketch
    Predict(PredictArgs),
    /// Erase a component and/or add noise dots
    Perturb(PerturbArgs),
    /// Finite-difference check of every op and a small network
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ArchArgs {
    /// Number of columns; takes the first x kernel lengths
    #[arg(long, default_value_t = 3)]
    pub columns: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KERNEL_LENGTHS)]
    pub kernel_lengths: Vec<usize>,
    /// Points sampled per sketch
    #[arg(long, default_value_t = crate::sketchio::DEFAULT_POINTS)]
    pub points: usize,
    /// Channel multiplier, "n" or "n/d"
    #[arg(long, default_value = "1")]
    #[serde(serialize_with = "display")]
    pub width_factor: WidthFactor,
}

fn display<S: serde::Serializer, T: std::fmt::Display>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl ArchArgs {
    pub fn config(&self, num_classes: usize) -> Result<MCPNetConfig> {
        if self.columns == 0 || self.columns > self.kernel_lengths.len() {
            return Err(Error::InvalidConfig(format!(
                "--columns {} needs between 1 and {} kernel lengths",
                self.columns,
                self.kernel_lengths.len()
            )));
        }
        let cfg = MCPNetConfig::new(
            &self.kernel_lengths[..self.columns],
            num_classes,
            self.points,
        )
        .with_width_factor(self.width_factor);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// A PNG sketch or a dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Category spec JSON (required for a single PNG)
    #[arg(long)]
    pub category_spec: Option<PathBuf>,
    /// Output directory for a single PNG
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = crate::sketchio::DEFAULT_POINTS)]
    pub points: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, default_value = "lamp")]
    pub template: String,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory; an existing manifest is extended
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_CANVAS)]
    pub canvas: usize,
    #[arg(long, default_value_t = 0.008)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory or manifest
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write
    #[arg(long, default_value = "model.mcpn")]
    pub out: PathBuf,
    /// Category to train on; optional when the dataset has one
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub eval_every: usize,
    /// point-mean divides the summed loss by the points per sketch; sum
    /// optimizes the plain sum
    #[arg(long, default_value = "point-mean")]
    #[serde(serialize_with = "display")]
    pub loss_reduction: Reduction,
    /// Keep the momentum running averages instead of re-estimating batch-norm
    /// statistics with the final parameters
    #[arg(long)]
    pub keep_running_stats: bool,
    /// Accepted for compatibility; training is always sequential and
    /// bit-reproducible
    #[arg(long)]
    pub deterministic: bool,
    /// History CSV; defaults to the checkpoint path with `.history.csv`
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Checkpoint, optionally prefixed `category=`; repeat for several
    /// categories
    #[arg(long, required = true)]
    pub model: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    /// train, test or all
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the report as CSV
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Input PNG
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub category_spec: PathBuf,
    /// Output PNG with strokes in component colors
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub category_spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Component name or id to erase
    #[arg(long)]
    pub drop_component: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub dots: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
}

enum Outcome {
    Ok,
    CheckFailed,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::CheckFailed) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn print_config<T: Serialize>(command: &str, args: &T) {
    let json = serde_json::to_string(args).expect("arguments serialize");
    println!("{command} config: {json}");
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Preprocess(a) => {
            print_config("preprocess", &a);
            preprocess_cmd(&a)
        }
        Command::GenSynthetic(a) => {
            print_config("gen-synthetic", &a);
            gen_cmd(&a)
        }
        Command::Train(a) => {
            print_config("train", &a);
            train_cmd(&a)
        }
        Command::Eval(a) => {
            print_config("eval", &a);
            eval_cmd(&a)
        }
        Command::Predict(a) => {
            print_config("predict", &a);
            predict_cmd(&a)
        }
        Command::Perturb(a) => {
            print_config("perturb", &a);
            perturb_cmd(&a)
        }
        Command::Gradcheck(a) => {
            print_config("gradcheck", &a);
            gradcheck_cmd(&a)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn preprocess_cmd(a: &PreprocessArgs) -> Result<Outcome> {
    if a.data.is_dir() {
        let manifest = Manifest::load(&a.data)?;
        let specs = manifest.load_specs(&a.data)?;
        let opts = LoadOptions {
            canvas: DEFAULT_CANVAS,
            n_points: a.points,
            use_cache: true,
        };
        let samples = load_samples(&a.data, &manifest, &specs, &Selection::default(), opts)?;
        println!("cached {} point sets of {} points", samples.len(), a.points);
        return Ok(Outcome::Ok);
    }
    let spec_path = a.category_spec.as_ref().ok_or_else(|| {
        Error::InvalidSpec("--category-spec is required for a single image".into())
    })?;
    let out = a
        .out
        .as_ref()
        .ok_or_else(|| Error::InvalidSpec("--out is required for a single image".into()))?;
    let spec = CategorySpec::load(spec_path)?;
    let (img, pts) = crate::sketchio::preprocess(&a.data, &spec, DEFAULT_CANVAS, a.points)?;
    create_dir(out)?;
    let stem = a
        .data
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    img.save_png(&out.join(format!("{stem}.png")))?;
    let mut csv = String::from("x,y,label,original\n");
    for (i, (p, l)) in pts.base.points.iter().zip(&pts.labels).enumerate() {
        csv += &format!(
            "{},{},{},{}\n",
            p[0],
            p[1],
            l,
            u8::from(i < pts.n_original())
        );
    }
    write_file(&out.join(format!("{stem}.points.csv")), csv.as_bytes())?;
    println!(
        "{}: {} foreground pixels after thinning, {} points ({} original)",
        a.data.display(),
        img.foreground_count(),
        pts.len(),
        pts.n_original()
    );
    Ok(Outcome::Ok)
}

fn gen_cmd(a: &GenArgs) -> Result<Outcome> {
    let template: Template = a.template.parse()?;
    let cfg = SynthConfig {
        canvas: a.canvas,
        amplitude: a.amplitude,
        noise: a.noise,
        ..SynthConfig::new(template, a.count, a.seed)
    };
    create_dir(&a.out)?;
    let generated = data::split(&gen_synthetic(&cfg, &a.out)?, a.train_fraction, a.seed)?;
    let existing = a.out.join(data::MANIFEST_FILE);
    let mut manifest = if existing.exists() {
        Manifest::load(&existing)?
    } else {
        Manifest::default()
    };
    manifest.merge(generated);
    manifest.save(&a.out)?;
    println!(
        "wrote {} {} sketches to {}",
        a.count,
        template,
        a.out.display()
    );
    Ok(Outcome::Ok)
}

fn pick_category(manifest: &Manifest, wanted: Option<&str>) -> Result<String> {
    match wanted {
        Some(c) if manifest.specs.contains_key(c) => Ok(c.to_string()),
        Some(c) => Err(Error::InvalidManifest(format!(
            "no category {c:?} in the dataset"
        ))),
        None => match manifest.categories().as_slice() {
            [only] => Ok(only.to_string()),
            cats => Err(Error::InvalidManifest(format!(
                "dataset has categories {cats:?}; choose one with --category"
            ))),
        },
    }
}

fn train_cmd(a: &TrainArgs) -> Result<Outcome> {
    let root = dataset_root(&a.data);
    let manifest = Manifest::load(&a.data)?;
    let specs = manifest.load_specs(&root)?;
    let category = pick_category(&manifest, a.category.as_deref())?;
    let spec = &specs[&category];
    let model_cfg = a.arch.config(spec.num_classes())?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        learning_rate: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        seed: a.seed,
        eval_every: a.eval_every,
        reduction: a.loss_reduction,
        population_stats: !a.keep_running_stats,
    };
    cfg.validate()?;
    let opts = LoadOptions {
        canvas: DEFAULT_CANVAS,
        n_points: a.arch.points,
        use_cache: true,
    };
    let select = |split| Selection {
        split: Some(split),
        category: Some(&category),
    };
    let train_set = load_samples(&root, &manifest, &specs, &select(Split::Train), opts)?;
    let val_set = load_samples(&root, &manifest, &specs, &select(Split::Test), opts)?;
    println!(
        "{category}: {} train / {} test sketches, {} classes",
        train_set.len(),
        val_set.len(),
        spec.num_classes()
    );
    let mut model = Model::<f32>::init(model_cfg, a.seed)?;
    let history = fit(&mut model, &train_set, &val_set, &cfg, |r| {
        let mut line = format!("epoch {:>3}  loss {:.5}", r.epoch, r.mean_train_loss);
        if let (Some(p), Some(c)) = (r.val_p_metric, r.val_c_metric) {
            line += &format!("  val P {:.2}%  C {:.2}%", 100.0 * p, 100.0 * c);
        }
        println!("{line}");
    })?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    model::save(&model, &a.out)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    history.save_csv(&history_path)?;
    println!("saved {} and {}", a.out.display(), history_path.display());
    Ok(Outcome::Ok)
}

fn parse_model_arg(s: &str) -> (Option<&str>, &Path) {
    match s.split_once('=') {
        Some((cat, path)) if !cat.is_empty() && !Path::new(s).exists() => {
            (Some(cat), Path::new(path))
        }
        _ => (None, Path::new(s)),
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<Outcome> {
    let split = match a.split.as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => {
            return Err(Error::InvalidManifest(format!(
                "unknown split {other:?} (train, test, all)"
            )))
        }
    };
    let root = dataset_root(&a.data);
    let manifest = Manifest::load(&a.data)?;
    let specs = manifest.load_specs(&root)?;
    let mut samples = Vec::new();
    let mut preds = Vec::new();
    for arg in &a.model {
        let (cat, path) = parse_model_arg(arg);
        let category = pick_category(&manifest, cat)?;
        let model: Model<f32> = model::load(path)?;
        if model.config().num_classes != specs[&category].num_classes() {
            return Err(Error::InvalidConfig(format!(
                "{} predicts {} classes, {category} has {}",
                path.display(),
                model.config().num_classes,
                specs[&category].num_classes()
            )));
        }
        let opts = LoadOptions {
            canvas: DEFAULT_CANVAS,
            n_points: model.config().n_points,
            use_cache: true,
        };
        let sel = Selection {
            split,
            category: Some(&category),
        };
        for s in load_samples(&root, &manifest, &specs, &sel, opts)? {
            preds.push(model.predict(&s.points.base)?);
            samples.push(s);
        }
    }
    let report = EvalReport::from_predictions(
        samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| (s.category.as_str(), &s.points, p.as_slice(), s.num_classes)),
    )?;
    println!("{report}");
    if let Some(path) = &a.report {
        write_file(path, report.to_csv().as_bytes())?;
    }
    Ok(Outcome::Ok)
}

/// Labels every foreground pixel of `img` with the prediction of the nearest
/// sampled point.
fn paint(
    img: &SketchImage,
    pixels: &[(usize, usize)],
    labels: &[usize],
    spec: &CategorySpec,
) -> Result<SketchImage> {
    let mut out = SketchImage::blank(img.width(), img.height());
    for (r, c, _) in img.foreground() {
        let nearest = pixels
            .iter()
            .enumerate()
            .min_by_key(|(_, &(pr, pc))| pr.abs_diff(r).pow(2) + pc.abs_diff(c).pow(2))
            .map(|(i, _)| i)
            .expect("at least one point");
        let label = labels[nearest];
        let rgb = spec.color_of(label).ok_or(Error::LabelOutOfRange {
            label,
            classes: spec.num_classes(),
        })?;
        out.set(r, c, rgb);
    }
    Ok(out)
}

fn predict_cmd(a: &PredictArgs) -> Result<Outcome> {
    let spec = CategorySpec::load(&a.category_spec)?;
    let model: Model<f32> = model::load(&a.model)?;
    if model.config().num_classes != spec.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "model predicts {} classes, spec has {}",
            model.config().num_classes,
            spec.num_classes()
        )));
    }
    let img = prepare(&load_strokes(&a.data, &spec)?, DEFAULT_CANVAS)?;
    let (pts, pixels) = extract_unlabeled(&img, model.config().n_points)?;
    let labels = model.forward(&pts.to_tensor(), Mode::Eval)?.argmax();
    let out = paint(&img, &pixels, &labels, &spec)?;
    out.save_png(&a.out)?;
    println!(
        "labeled {} stroke pixels into {}",
        out.foreground_count(),
        a.out.display()
    );
    if let Ok(truth) = load_sketch(&a.data, &spec) {
        let truth = crate::sketchio::extract_points(
            &prepare(&truth, DEFAULT_CANVAS)?,
            &spec,
            model.config().n_points,
        )?;
        let p = metrics::p_metric(&labels, &truth)?;
        let (ok, total) = metrics::c_metric(&labels, &truth)?;
        println!(
            "against input colors: P-metric {:.2}%  C-metric {ok}/{total}",
            100.0 * p
        );
    }
    Ok(Outcome::Ok)
}

fn perturb_cmd(a: &PerturbArgs) -> Result<Outcome> {
    let spec = CategorySpec::load(&a.category_spec)?;
    let img = load_sketch(&a.data, &spec)?;
    let drop = a
        .drop_component
        .as_deref()
        .map(|c| spec.resolve(c))
        .transpose()?;
    let out = perturb(&img, &spec, drop, a.dots, a.seed)?;
    out.save_png(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(Outcome::Ok)
}

fn gradcheck_cmd(a: &GradcheckArgs) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut failed = false;
    for seed in a.seed..a.seed + a.seeds.max(1) {
        for r in gradcheck_suite(seed)? {
            let ok = r.passes();
            failed |= !ok;
            worst = worst.max(r.report.max_rel_error);
            println!(
                "seed {seed:<3} {:<22} max rel. err {:.3e}  checked {:>5}  skipped {:>4}  {}",
                r.name,
                r.report.max_rel_error,
                r.report.checked,
                r.report.skipped,
                if ok { "ok" } else { "FAIL" }
            );
        }
    }
    println!("max rel. err: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    Ok(if failed {
        Outcome::CheckFailed
    } else {
        Outcome::Ok
    })
}
