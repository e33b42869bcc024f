//! Command-line front end. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_benchmark, write_benchmark, Manifest, ShapesBenchmark};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::pipeline::{self, config::parse_pairs, eval, infer, RunConfig, Stage};
use crate::scoring::{self, ReactThreshold, ScoreKind, ScoreRecord};

#[derive(Parser, Debug)]
#[command(name = "oodkit", version, about = "Train and evaluate background-suppressing OOD detectors")]
struct Cli {
    /// File of `key = value` lines; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic shapes-on-textures benchmark.
    GenData(GenArgs),
    /// Train an encoder and head from scratch with cross-entropy.
    Pretrain(RunArgs),
    /// Fine-tune a checkpoint with the background-norm objective.
    Finetune(RunArgs),
    /// Score one split (or a feature dump) with one score.
    Score(ScoreArgs),
    /// Score every test split with every score and summarize.
    Eval(RunArgs),
    /// Fine-tune and evaluate once per value of one hyperparameter.
    Sweep(SweepArgs),
    /// Aggregate evaluation directories and render heatmaps.
    Report(ReportArgs),
}

macro_rules! keyed_args {
    ($name:ident { $($field:ident => $key:literal : $help:literal),* $(,)? }) => {
        #[derive(Args, Debug, Default)]
        struct $name {
            $(
                #[arg(long = $key, value_name = "VALUE", help = $help)]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, String)> {
                let mut v = Vec::new();
                $( if let Some(x) = &self.$field { v.push(($key, x.clone())); } )*
                v
            }
        }
    };
}

keyed_args!(RunArgs {
    epochs => "epochs": "Training epochs",
    lr => "lr": "Initial learning rate",
    lr_decay_factor => "lr-decay-factor": "Divide the learning rate by this at each decay epoch",
    lr_decay_epochs => "lr-decay-epochs": "Comma-separated decay epochs",
    momentum => "momentum": "SGD momentum",
    weight_decay => "weight-decay": "L2 weight decay",
    delta => "delta": "Background probability threshold",
    mu => "mu": "Norm margin of the background hinge",
    lambda => "lambda": "Weight of the background term",
    batch_size => "batch-size": "Images per batch",
    crop_padding => "crop-padding": "Random-crop padding in pixels",
    hflip => "hflip": "Random horizontal flips (true/false)",
    color_jitter => "color-jitter": "Per-channel brightness/contrast jitter (true/false)",
    react_percentile => "react-percentile": "Percentile of ID activations used as the ReAct clip",
    odin_temperature => "odin-temperature": "ODIN temperature",
    odin_epsilon => "odin-epsilon": "ODIN input perturbation size",
    extraction_refresh => "extraction-refresh": "batch, epoch or once",
    widths => "widths": "Comma-separated stage widths",
    blocks_per_stage => "blocks-per-stage": "Conv layers per stage",
    image_side => "image-side": "Input image side",
    batch_norm => "batch-norm": "Batch normalization after each conv (true/false)",
    input_channels => "input-channels": "Input channels",
    train_limit => "train-limit": "Use only the first N training images (0 = all)",
    eval_limit => "eval-limit": "Use only the first N images of each test split (0 = all)",
    data => "data": "Dataset directory",
    checkpoint => "checkpoint": "Input checkpoint",
    dump_extraction => "dump-extraction": "Write per-location extraction decisions (true/false)",
});

keyed_args!(GenArgs {
    classes => "classes": "In-distribution classes (at most 6)",
    image_side => "image-side": "Image side in pixels",
    texture_pool => "texture-pool": "Number of background textures",
    texture_affinity => "texture-affinity": "Chance an ID image uses one of its class's own textures",
    color_fidelity => "color-fidelity": "Chance an ID shape is painted in its own class colour",
    id_train => "id-train": "Training images",
    id_test => "id-test": "ID test images",
    ood_background => "ood-background": "Texture-only OOD images",
    ood_novelshape => "ood-novelshape": "Novel-shape OOD images",
});

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split to score (default id-test).
    #[arg(long)]
    split: Option<String>,
    /// Score pooled features from an FVEC file instead of images.
    #[arg(long, value_name = "FILE")]
    features: Option<PathBuf>,
    /// msp, energy, odin, react-energy or featurenorm.
    #[arg(long, default_value = "energy")]
    score: String,
    /// ReAct clip value; fitted on id-train when omitted.
    #[arg(long)]
    react_clip: Option<f32>,
    #[arg(long, default_value_t = 90.0)]
    react_percentile: f32,
    #[arg(long, default_value_t = 1000.0)]
    odin_temperature: f32,
    #[arg(long, default_value_t = 0.0)]
    odin_epsilon: f32,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Hyperparameter to vary, e.g. delta, mu or lambda.
    #[arg(long)]
    param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding evaluation outputs (default: --out).
    #[arg(long)]
    run: Option<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => 1,
                _ => 2,
            }
        }
    }
}

fn file_pairs(config: &Option<PathBuf>) -> Result<Vec<(String, String)>> {
    match config {
        Some(p) => {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
            parse_pairs(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)
        }
        None => Ok(Vec::new()),
    }
}

fn run_config(cli: &Cli, stage: Stage, args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::defaults(stage);
    for (k, v) in file_pairs(&cli.config)? {
        if k == "stage" && v != stage.name() {
            return Err(Error::Config(format!("config file says stage = {v}, command is {}", stage.name())));
        }
        cfg.set(&k, &v)?;
    }
    for (k, v) in args.pairs() {
        cfg.set(k, &v)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    Ok(cfg)
}

fn set_bench(b: &mut ShapesBenchmark, key: &str, value: &str) -> Result<()> {
    let n = || value.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad value '{value}' for {key}")));
    let p = || value.trim().parse::<f32>().map_err(|_| Error::Config(format!("bad value '{value}' for {key}")));
    match key {
        "seed" => b.seed = value.trim().parse().map_err(|_| Error::Config(format!("bad value '{value}' for seed")))?,
        "classes" => b.classes = n()?,
        "image-side" => b.image_side = n()?,
        "texture-pool" => b.texture_pool = n()?,
        "texture-affinity" => b.texture_affinity = p()?,
        "color-fidelity" => b.color_fidelity = p()?,
        "id-train" => b.id_train = n()?,
        "id-test" => b.id_test = n()?,
        "ood-background" => b.ood_background = n()?,
        "ood-novelshape" => b.ood_novelshape = n()?,
        "out" => {}
        _ => return Err(Error::Config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

fn bench_text(b: &ShapesBenchmark) -> String {
    format!(
        "seed = {}\nclasses = {}\nimage-side = {}\ntexture-pool = {}\ntexture-affinity = {}\ncolor-fidelity = {}\nid-train = {}\nid-test = {}\nood-background = {}\nood-novelshape = {}\n",
        b.seed, b.classes, b.image_side, b.texture_pool, b.texture_affinity, b.color_fidelity, b.id_train, b.id_test, b.ood_background, b.ood_novelshape
    )
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Config("missing required flag --out".into()))
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => {
            let mut b = ShapesBenchmark::default();
            for (k, v) in file_pairs(&cli.config)? {
                set_bench(&mut b, &k, &v)?;
            }
            for (k, v) in args.pairs() {
                set_bench(&mut b, k, &v)?;
            }
            if let Some(s) = cli.seed {
                b.seed = s;
            }
            let out = out_dir(&cli)?;
            let bench = generate_benchmark(&b)?;
            let manifest = write_benchmark(out, &bench)?;
            pipeline::write_effective_config(out, &bench_text(&b))?;
            for s in &manifest.splits {
                println!("{:<16} {:>6} images  {}", s.name, s.count, out.join(&s.path).display());
            }
            Ok(())
        }
        Command::Pretrain(args) | Command::Finetune(args) => {
            let stage = if matches!(cli.command, Command::Pretrain(_)) { Stage::Pretrain } else { Stage::Finetune };
            let cfg = run_config(&cli, stage, args)?;
            let run = pipeline::run_training(&cfg)?;
            println!("{}", pipeline::train::TRAIN_LOG_HEADER);
            for e in &run.summary.epochs {
                let acc = e.id_test_acc.map(|a| format!("{a:.4}")).unwrap_or_default();
                println!("{},{:.5},{:.5},{:.1},{},{}", e.epoch, e.ce_loss, e.lff_loss, e.s_count_mean, e.lr, acc);
            }
            println!("checkpoint: {}", run.checkpoint.display());
            Ok(())
        }
        Command::Eval(args) => {
            let cfg = run_config(&cli, Stage::Pretrain, args)?;
            let evaluation = pipeline::run_evaluation(&cfg)?;
            let s = &evaluation.summary;
            println!("id-test accuracy {:.4}  react clip {:.4}", s.id_test_accuracy, s.react.clip);
            println!("{:<16} {:<13} {:>8} {:>8}", "ood_split", "score", "fpr95", "auroc");
            for e in &s.entries {
                println!("{:<16} {:<13} {:>8.4} {:>8.4}", e.ood_split, e.score, e.fpr95, e.auroc);
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let mut cfg = run_config(&cli, Stage::Finetune, &args.run)?;
            cfg.stage = Stage::Finetune;
            let rows = pipeline::run_sweep(&cfg, &args.param, &args.values)?;
            println!("{}", pipeline::SWEEP_HEADER);
            for r in rows {
                println!("{},{:.4},{:.4},{},{},{:.1}", r.value, r.fpr95, r.auroc, r.ood_split, r.score, r.s_count_mean);
            }
            Ok(())
        }
        Command::Report(args) => {
            let out = out_dir(&cli)?;
            let run_dir = args.run.as_deref().unwrap_or(out);
            let report = pipeline::build_report(run_dir, out)?;
            for e in &report.evaluations {
                println!("{}: {} entries, id-test accuracy {:.4}", e.summary.label, e.summary.entries.len(), e.summary.id_test_accuracy);
            }
            println!("report: {}", out.join("report.json").display());
            Ok(())
        }
        Command::Score(args) => score(&cli, args),
    }
}

fn score(cli: &Cli, args: &ScoreArgs) -> Result<()> {
    let kind: ScoreKind = args.score.parse()?;
    let ckpt = args.checkpoint.as_deref().ok_or_else(|| Error::Config("missing required flag --checkpoint".into()))?;
    let out = out_dir(cli)?;
    if !ckpt.exists() {
        return Err(Error::MissingFile(ckpt.to_path_buf()));
    }
    let (model, _) = Model::load(ckpt)?;
    let settings = eval::EvalSettings {
        react_percentile: args.react_percentile,
        odin_temperature: args.odin_temperature,
        odin_epsilon: args.odin_epsilon,
        ..Default::default()
    };
    let react_from_clip = args.react_clip.map(|clip| ReactThreshold { clip, percentile: f32::NAN, fitted_on: "flag".into() });

    let (split, values) = if let Some(fpath) = &args.features {
        let (rows, dim) = scoring::read_fvec(fpath)?;
        if dim != model.feature_channels() {
            return Err(Error::Config(format!("feature dump is {dim} wide, model has {} channels", model.feature_channels())));
        }
        let head = model.head();
        let count = rows.len() / dim.max(1);
        let feats = infer::SplitFeatures {
            count,
            channels: dim,
            classes: model.class_count,
            logits: head.logits(&rows, count),
            global: rows,
            featurenorm: Vec::new(),
            labels: vec![0; count],
        };
        let react = match (kind, react_from_clip) {
            (ScoreKind::ReactEnergy, None) => {
                return Err(Error::Config("react-energy on a feature dump needs --react-clip".into()))
            }
            (_, r) => r.unwrap_or(ReactThreshold { clip: f32::INFINITY, percentile: f32::NAN, fitted_on: String::new() }),
        };
        if kind == ScoreKind::FeatureNorm || (kind == ScoreKind::Odin && args.odin_epsilon > 0.0) {
            return Err(Error::Config(format!("{kind} needs images, not pooled features")));
        }
        ("features".to_string(), eval::score_split(&model, kind, &feats, &react, &settings, None)?)
    } else {
        let data_dir = args.data.as_deref().ok_or_else(|| Error::Config("missing required flag --data (or --features)".into()))?;
        let manifest = Manifest::load(data_dir)?;
        let split = args.split.clone().unwrap_or_else(|| crate::data::ID_TEST.to_string());
        let data = manifest.load_split(data_dir, &split)?;
        let frozen = model.freeze();
        let threads = infer::threads_from_env();
        let feats = infer::featurize(&frozen, &data, &manifest.normalization, 0, threads)?;
        let react = match react_from_clip {
            Some(r) => r,
            None if kind == ScoreKind::ReactEnergy => {
                let train = manifest.load_split(data_dir, crate::data::ID_TRAIN)?;
                let tf = infer::featurize(&frozen, &train, &manifest.normalization, 0, threads)?;
                scoring::fit_react_threshold(&tf.global, args.react_percentile, crate::data::ID_TRAIN)?
            }
            None => ReactThreshold { clip: f32::INFINITY, percentile: f32::NAN, fitted_on: String::new() },
        };
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        scoring::write_fvec(&out.join(format!("features-{split}.fvec")), &feats.global, feats.channels)?;
        let v = eval::score_split(&model, kind, &feats, &react, &settings, Some((&data, &manifest.normalization)))?;
        (split, v)
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("scores-{}.csv", kind.name()));
    let records: Vec<ScoreRecord> =
        values.iter().enumerate().map(|(i, &s)| ScoreRecord { id: i, split: split.clone(), score: s }).collect();
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    scoring::write_scores_csv(&mut w, &records).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / values.len().max(1) as f64;
    println!("{} {} scores on {split}, mean {mean:.4}: {}", values.len(), kind, path.display());
    Ok(())
}
