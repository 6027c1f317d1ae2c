use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lus_screen::arch::{self, build_unet, build_vgg16, Init, ModelGraph};
use lus_screen::dataset::{self, make_folds, synth, DatasetManifest, FoldPlan};
use lus_screen::imaging::{self, AugmentConfig};
use lus_screen::metrics::DEFAULT_THRESHOLD;
use lus_screen::pipeline::{self, Pipeline};
use lus_screen::training::{self, HeadParams, TrainConfig};
use lus_screen::weights::import_map;
use lus_screen::{BoundModel, Error, ErrorCategory, UnetConfig, Vgg16Config, WeightArchive};

#[derive(Parser)]
#[command(
    name = "lus-screen",
    version,
    about = "Lung-ultrasound COVID-19 screening"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify and segment one frame, write its overlay and print the report.
    Infer(InferArgs),
    /// Cross-validated evaluation with per-fold heads (trained inline if absent).
    Evaluate(EvaluateArgs),
    /// Train one classifier head per fold on frozen backbone features.
    TrainHead(TrainArgs),
    /// Write the augmentation variants of one frame.
    Augment(AugmentArgs),
    /// Assign videos to folds.
    Split(SplitArgs),
    /// Frame indices to sample from a video.
    SelectFrames(SelectArgs),
    /// Per-layer latency benchmark.
    Bench(BenchArgs),
    /// Layer table of a model.
    Summarize(ModelArgs),
    /// Generate a synthetic dataset with manifest.
    Synth(SynthArgs),
    /// Write freshly initialized weights for a model.
    InitWeights(InitArgs),
    /// Rename archive entries using a JSON `{old: new}` map.
    ImportWeights(ImportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Vgg16,
    Unet,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ppm,
    Png,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Ppm => "ppm",
            Format::Png => "png",
        }
    }
}

#[derive(Args, Clone)]
struct Width {
    /// Divide every channel count by this factor (1 = published widths).
    #[arg(long, default_value_t = 1)]
    channel_divisor: usize,
}

impl Width {
    fn vgg(&self) -> Result<ModelGraph, Error> {
        build_vgg16(&Vgg16Config::default().with_channel_divisor(self.channel_divisor))
    }

    fn unet(&self) -> Result<ModelGraph, Error> {
        build_unet(&UnetConfig::default().with_channel_divisor(self.channel_divisor))
    }

    fn graph(&self, kind: ModelKind) -> Result<ModelGraph, Error> {
        match kind {
            ModelKind::Vgg16 => self.vgg(),
            ModelKind::Unet => self.unet(),
        }
    }
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    image: PathBuf,
    /// Ground-truth mask; adds IoU to the report.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Classifier archive (backbone and head).
    #[arg(long)]
    weights_cls: PathBuf,
    #[arg(long)]
    weights_seg: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Ppm)]
    format: Format,
    #[command(flatten)]
    width: Width,
}

#[derive(Args)]
struct FoldArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Saved fold plan; otherwise folds are drawn from `--k` and `--seed`.
    #[arg(long)]
    folds: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FoldArgs {
    fn load(&self) -> Result<(DatasetManifest, FoldPlan), Error> {
        let manifest = dataset::load_manifest(&self.manifest)?;
        let plan = match &self.folds {
            Some(p) => FoldPlan::load(p)?,
            None => make_folds(&manifest, self.k, self.seed)?,
        };
        plan.validate(&manifest)?;
        plan.balance_warnings(&manifest);
        Ok((manifest, plan))
    }
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    /// Train on original frames only.
    #[arg(long)]
    no_augment: bool,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed,
            augment: (!self.no_augment).then(AugmentConfig::default),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    folds: FoldArgs,
    /// Backbone archive; any head slots in it are ignored.
    #[arg(long)]
    weights_cls: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    width: Width,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    folds: FoldArgs,
    /// Backbone archive; heads come from `--heads` or inline training.
    #[arg(long)]
    weights_cls: PathBuf,
    #[arg(long)]
    weights_seg: PathBuf,
    /// Directory holding `head_fold<i>.lsw` for every fold.
    #[arg(long)]
    heads: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Ppm)]
    format: Format,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    width: Width,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    frame_count: u64,
    #[arg(long, default_value_t = 1)]
    stride: u64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Vgg16)]
    model: ModelKind,
    #[command(flatten)]
    width: Width,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Archive to bind; He-uniform weights from `--seed` when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    videos: usize,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    no_masks: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    He,
    Zeros,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = InitKind::He)]
    init: InitKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn print_json(v: &impl serde::Serialize) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        context: path.display().to_string(),
        source: e,
    }
}

fn check_threshold(t: f64) -> Result<(), Error> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold {t} not in [0,1]")))
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Infer(a) => {
            check_threshold(a.threshold)?;
            let p = Pipeline::<f32>::new(
                &a.width.vgg()?,
                &WeightArchive::load(&a.weights_cls)?,
                &a.width.unet()?,
                &WeightArchive::load(&a.weights_seg)?,
            )?
            .with_threshold(a.threshold);
            let r = pipeline::infer_single(
                &a.image,
                &p,
                a.mask.as_deref(),
                &a.out_dir,
                a.format.ext(),
            )?;
            write_json(&a.out_dir.join(format!("{}.json", r.id)), &r)?;
            print_json(&r)
        }
        Command::TrainHead(a) => {
            let (manifest, plan) = a.folds.load()?;
            let graph = a.width.vgg()?;
            let backbone = WeightArchive::load(&a.weights_cls)?;
            let outcome = training::train_head::<f32>(
                &manifest,
                &plan,
                &graph,
                &backbone,
                &a.train.config(a.folds.seed),
            )?;
            training::save_heads(&outcome, &a.out_dir)?;
            plan.save(a.out_dir.join("folds.json"))?;
            let summary = outcome.summary();
            write_json(&a.out_dir.join("training.json"), &summary)?;
            print_json(&summary)
        }
        Command::Evaluate(a) => {
            check_threshold(a.threshold)?;
            let (manifest, plan) = a.folds.load()?;
            let cls = a.width.vgg()?;
            let seg = a.width.unet()?;
            let backbone = WeightArchive::load(&a.weights_cls)?;
            let seg_weights = WeightArchive::load(&a.weights_seg)?;
            let evaluation = match &a.heads {
                Some(dir) => {
                    let heads = (0..plan.k)
                        .map(|f| {
                            let p = training::head_path(dir, f);
                            if !p.exists() {
                                return Err(Error::MissingParam(format!(
                                    "head archive {}",
                                    p.display()
                                )));
                            }
                            HeadParams::from_archive(&cls, &WeightArchive::load(&p)?)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let p =
                        Pipeline::<f32>::with_heads(&cls, &backbone, heads, &seg, &seg_weights)?
                            .with_threshold(a.threshold);
                    pipeline::evaluate(&manifest, &plan, &p, &a.out_dir, a.format.ext())?
                }
                None => {
                    let cv = pipeline::cross_validate::<f32>(
                        &manifest,
                        &plan,
                        &cls,
                        &backbone,
                        &seg,
                        &seg_weights,
                        &a.train.config(a.folds.seed),
                        &a.out_dir,
                        a.format.ext(),
                    )?;
                    write_json(&a.out_dir.join("training.json"), &cv.training.summary())?;
                    cv.evaluation
                }
            };
            print_json(&evaluation.report)
        }
        Command::Augment(a) => {
            let img = imaging::load_gray(&a.image)?;
            let mask = a.mask.as_deref().map(imaging::load_gray).transpose()?;
            let stem = a
                .image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "frame".into());
            let variants = imaging::augment_keyed(
                &stem,
                &img,
                mask.as_ref(),
                &AugmentConfig::default(),
                a.seed,
            )?;
            fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
            let mut written = Vec::new();
            for (i, v) in variants.iter().enumerate() {
                let p = a.out_dir.join(format!("{stem}_aug{i:02}.pgm"));
                imaging::save_gray(&p, &v.image)?;
                written.push(p);
                if let Some(m) = &v.mask {
                    let p = a.out_dir.join(format!("{stem}_aug{i:02}_mask.pgm"));
                    imaging::save_gray(&p, m)?;
                    written.push(p);
                }
            }
            print_json(&written)
        }
        Command::Split(a) => {
            let manifest = dataset::load_manifest(&a.manifest)?;
            let plan = make_folds(&manifest, a.k, a.seed)?;
            fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
            plan.save(a.out_dir.join("folds.json"))?;
            plan.balance_warnings(&manifest);
            print_json(&plan.class_balance(&manifest))
        }
        Command::SelectFrames(a) => print_json(&dataset::select_frames(a.frame_count, a.stride)?),
        Command::Summarize(a) => {
            print!("{}", arch::summarize(&a.width.graph(a.model)?));
            Ok(())
        }
        Command::Bench(a) => {
            let graph = a.model.width.graph(a.model.model)?;
            let weights = match &a.weights {
                Some(p) => WeightArchive::load(p)?,
                None => arch::init_weights(&graph, Init::HeUniform, a.seed),
            };
            let model = BoundModel::<f32>::new(&graph, &weights)?;
            print_json(&pipeline::bench(&model, a.iterations, a.warmup, a.seed)?)
        }
        Command::Synth(a) => {
            let m = synth::generate(
                &a.out_dir,
                &synth::SynthSpec {
                    videos: a.videos,
                    frames_per_video: a.frames,
                    size: a.size,
                    with_masks: !a.no_masks,
                    seed: a.seed,
                },
            )?;
            eprintln!("{} frames written to {}", m.len(), a.out_dir.display());
            Ok(())
        }
        Command::InitWeights(a) => {
            let graph = a.model.width.graph(a.model.model)?;
            let init = match a.init {
                InitKind::He => Init::HeUniform,
                InitKind::Zeros => Init::Zeros,
            };
            arch::init_weights(&graph, init, a.seed).save(&a.out)
        }
        Command::ImportWeights(a) => {
            let text = fs::read_to_string(&a.map).map_err(|e| io_err(&a.map, e))?;
            let map: BTreeMap<String, String> = serde_json::from_str(&text)?;
            import_map(&WeightArchive::load(&a.input)?, &map)?.save(&a.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.category() {
                ErrorCategory::Usage => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Model => 4,
            })
        }
    }
}
