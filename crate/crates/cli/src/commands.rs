use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use macnet::arch::MacNet;
use macnet::data::{event_split, generate_synthetic_dataset, DatasetManifest, Split};
use macnet::metrics::EvalReport;
use macnet::report::{render_report_dir, write_report};
use macnet::train::{evaluate, Checkpoint, HistoryRecord, Trainer};
use macnet::Real;

use crate::settings::{resolve, Precision, Settings, SynthSettings, TrainSettings};
use crate::{Cli, Command, EvalArgs, ReportArgs, SplitArgs, SynthArgs, TrainArgs, UsageError};

const CONFIG_SNAPSHOT: &str = "config.txt";
const MANIFEST_COPY: &str = "manifest.csv";
const STATS_FILE: &str = "stats.csv";

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a, &cli.out_root),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a, &cli.out_root),
        Command::Eval(a) => eval(a, &cli.out_root),
        Command::Report(a) => report(a),
    }
}

fn read_manifest(path: &Path) -> anyhow::Result<DatasetManifest> {
    DatasetManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))
}

/// The same manifest with image paths that stay valid when written under
/// `dir`.
fn relocate(manifest: &DatasetManifest, dir: &Path) -> anyhow::Result<DatasetManifest> {
    let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same(&manifest.root, dir) {
        return Ok(manifest.clone());
    }
    let mut out = manifest.clone();
    for e in &mut out.events {
        for p in &mut e.image_refs {
            *p = std::path::absolute(manifest.root.join(&*p))?;
        }
    }
    out.root = dir.to_path_buf();
    Ok(out)
}

fn print_stats(manifest: &DatasetManifest) {
    println!("{:<24} {:>12} {:>12} {:>12}", "class", "train", "val", "test");
    let mut total = [(0, 0); 3];
    for (name, c) in manifest.class_names.iter().zip(manifest.split_counts()) {
        let cell = |s: usize| format!("{} ({} ev)", c.images[s], c.events[s]);
        println!("{name:<24} {:>12} {:>12} {:>12}", cell(0), cell(1), cell(2));
        for (s, t) in total.iter_mut().enumerate() {
            t.0 += c.images[s];
            t.1 += c.events[s];
        }
    }
    let cell = |s: usize| format!("{} ({} ev)", total[s].0, total[s].1);
    println!("{:<24} {:>12} {:>12} {:>12}", "total", cell(0), cell(1), cell(2));
}

fn write_split_outputs(manifest: &DatasetManifest, path: &Path) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    manifest.write(path)?;
    manifest.write_stats(dir.join(STATS_FILE))?;
    Ok(())
}

fn synth(args: SynthArgs, out_root: &Path) -> anyhow::Result<()> {
    let mut overrides = Vec::new();
    let mut push = |k, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k, v));
        }
    };
    push("seed", args.seed.map(|v| v.to_string()));
    push("classes", args.classes.map(|v| v.to_string()));
    push("events_per_class", args.events_per_class.map(|v| v.to_string()));
    push("images_per_event", args.images_per_event);
    push("image_size", args.image_size);
    push("ratios", args.ratios);
    let settings = resolve(SynthSettings::default(), args.config.as_deref(), overrides)?;
    let cfg = settings.synth_config();
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;

    let out = args.out.unwrap_or_else(|| out_root.join("synth"));
    let manifest = generate_synthetic_dataset(&cfg, &out)?;
    let manifest = event_split(&manifest, settings.ratios, settings.seed)?;
    let path = out.join(MANIFEST_COPY);
    write_split_outputs(&manifest, &path)?;
    std::fs::write(out.join(CONFIG_SNAPSHOT), settings.snapshot())?;
    print_stats(&manifest);
    println!("wrote {} images, manifest {}", manifest.num_images(), path.display());
    Ok(())
}

fn split(args: SplitArgs) -> anyhow::Result<()> {
    let ratios = {
        let mut s = SynthSettings::default();
        s.apply("ratios", &args.ratios).map_err(|e| UsageError(format!("--ratios: {e}")))?;
        s.ratios
    };
    let manifest = read_manifest(&args.manifest)?;
    let out = args.out.unwrap_or_else(|| args.manifest.clone());
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(out_dir)?;
    let manifest = relocate(&event_split(&manifest, ratios, args.seed)?, out_dir)?;
    write_split_outputs(&manifest, &out)?;
    print_stats(&manifest);
    println!("wrote {}", out.display());
    Ok(())
}

fn train_overrides(args: &TrainArgs) -> Vec<(&'static str, String)> {
    let mut o = Vec::new();
    let mut push = |k, v: Option<String>| {
        if let Some(v) = v {
            o.push((k, v));
        }
    };
    push("seed", args.seed.map(|v| v.to_string()));
    push("model_seed", args.model_seed.map(|v| v.to_string()));
    push("epochs", args.epochs.map(|v| v.to_string()));
    push("batch_size", args.batch_size.map(|v| v.to_string()));
    push("width_multiplier", args.width_multiplier.map(|v| v.to_string()));
    push("lr", args.lr.map(|v| v.to_string()));
    push("lr_step", args.lr_step.map(|v| v.to_string()));
    push("lr_gamma", args.lr_gamma.map(|v| v.to_string()));
    push("momentum", args.momentum.map(|v| v.to_string()));
    push("weight_decay", args.weight_decay.map(|v| v.to_string()));
    push("input_size", args.input_size.clone());
    push("augment", args.no_augment.then(|| "false".to_string()));
    push("checkpoint_every", args.checkpoint_every.map(|v| v.to_string()));
    push("precision", args.precision.clone());
    o
}

fn train(args: TrainArgs, out_root: &Path) -> anyhow::Result<()> {
    let run_dir = args.run_dir.clone().unwrap_or_else(|| out_root.join("run"));
    let snapshot = run_dir.join(CONFIG_SNAPSHOT);
    // a resumed run keeps its stored settings unless a config file is given
    let config = match (&args.config, args.resume && snapshot.exists()) {
        (Some(c), _) => Some(c.clone()),
        (None, true) => Some(snapshot.clone()),
        (None, false) => None,
    };
    let profile = if args.paper_faithful {
        TrainSettings::paper_faithful()
    } else {
        TrainSettings::desk()
    };
    let settings = resolve(profile, config.as_deref(), train_overrides(&args))?;
    let manifest = read_manifest(&args.manifest)?;
    let model_config = settings.model_config(manifest.num_classes())?;
    let run_config = settings.run_config(Some(&run_dir))?;

    std::fs::create_dir_all(run_dir.join("reports"))?;
    std::fs::write(&snapshot, settings.snapshot())?;
    relocate(&manifest, &run_dir)?.write(run_dir.join(MANIFEST_COPY))?;

    let start = Instant::now();
    let run = RunContext {
        run_dir: &run_dir,
        manifest: &manifest,
        batch_size: settings.batch_size,
    };
    let checkpoint = if args.resume {
        let path = run_dir.join("checkpoints/last.ckpt");
        Some(Checkpoint::load(&path).with_context(|| format!("resuming from {}", path.display()))?)
    } else {
        None
    };
    match settings.precision {
        Precision::F32 => run.train::<f32>(model_config, settings.model_seed, run_config, checkpoint.as_ref())?,
        Precision::F64 => run.train::<f64>(model_config, settings.model_seed, run_config, checkpoint.as_ref())?,
    }
    println!(
        "wall time {:.1}s, run directory {}",
        start.elapsed().as_secs_f64(),
        run_dir.display()
    );
    Ok(())
}

struct RunContext<'a> {
    run_dir: &'a Path,
    manifest: &'a DatasetManifest,
    batch_size: usize,
}

impl RunContext<'_> {
    fn train<T: Real>(
        &self,
        model_config: macnet::arch::MacNetConfig,
        model_seed: u64,
        run_config: macnet::train::TrainRunConfig,
        checkpoint: Option<&Checkpoint>,
    ) -> anyhow::Result<()> {
        let mut trainer = match checkpoint {
            Some(ck) => {
                let t = Trainer::<T>::resume(ck, self.manifest, run_config)?;
                println!("resuming at epoch {}", t.next_epoch());
                t
            }
            None => Trainer::new(MacNet::<T>::init(model_config, model_seed)?, self.manifest, run_config)?,
        };
        println!(
            "{} parameters, class weights {:?}",
            trainer.model.num_parameters(),
            trainer.weights().weights()
        );
        while trainer.next_epoch() < trainer.config().epochs {
            print_epoch(&trainer.run_epoch()?);
        }
        match trainer.best() {
            Some((epoch, f1)) => println!("best val macro-F1 {f1:.4} at epoch {epoch}"),
            None => println!("no validation split; best checkpoint not tracked"),
        }

        if self.manifest.image_count(Split::Test) == 0 {
            println!("no test split; skipping test reports");
            return Ok(());
        }
        let last = evaluate(&trainer.model, self.manifest, Split::Test, self.batch_size)?;
        self.write_reports("test_last", &last)?;
        let best_path = self.run_dir.join("checkpoints/best.ckpt");
        if best_path.exists() {
            let best: MacNet<T> = Checkpoint::load(&best_path)?.build_model()?;
            let best = evaluate(&best, self.manifest, Split::Test, self.batch_size)?;
            self.write_reports("test_best", &best)?;
        }
        Ok(())
    }

    fn write_reports(&self, name: &str, report: &EvalReport) -> anyhow::Result<()> {
        let dir = self.run_dir.join("reports").join(name);
        write_report(report, &self.manifest.class_names, &dir)?;
        render_report_dir(&dir, &dir)?;
        println!(
            "{name}: top1 {:.4} top5 {:.4} macro P/R/F1 {:.4}/{:.4}/{:.4} -> {}",
            report.top1,
            report.top5,
            report.macro_precision,
            report.macro_recall,
            report.macro_f1,
            dir.display()
        );
        Ok(())
    }
}

fn print_epoch(r: &HistoryRecord) {
    println!(
        "epoch {:>3}  lr {:.2e}  loss {:.4}  val top1 {:.3}  val top5 {:.3}  val F1 {:.3}  train top1 {:.3}",
        r.epoch, r.lr, r.train_loss, r.val_top1, r.val_top5, r.val_macro_f1, r.train_top1
    );
}

fn eval(args: EvalArgs, out_root: &Path) -> anyhow::Result<()> {
    let split: Split = args.split.parse().map_err(|e: macnet::Error| UsageError(e.to_string()))?;
    if split == Split::Unassigned {
        return Err(UsageError("--split must be train, val or test".into()).into());
    }
    let precision: Precision = args.precision.parse().map_err(UsageError)?;
    if args.batch_size == 0 {
        return Err(UsageError("--batch-size must be at least 1".into()).into());
    }
    let manifest = read_manifest(&args.manifest)?;
    let ck = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    if ck.config.num_classes != manifest.num_classes() {
        return Err(macnet::Error::Manifest(format!(
            "checkpoint predicts {} classes, manifest has {}",
            ck.config.num_classes,
            manifest.num_classes()
        ))
        .into());
    }
    let report = match precision {
        Precision::F32 => evaluate(&ck.build_model::<f32>()?, &manifest, split, args.batch_size)?,
        Precision::F64 => evaluate(&ck.build_model::<f64>()?, &manifest, split, args.batch_size)?,
    };
    let out: PathBuf = args.out.unwrap_or_else(|| out_root.join("eval").join(split.as_str()));
    write_report(&report, &manifest.class_names, &out)?;
    render_report_dir(&out, &out)?;
    print!("{}", macnet::report::summary_text(&report));
    println!("report written to {}", out.display());
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    let out = args.out.unwrap_or_else(|| args.input.clone());
    let written = render_report_dir(&args.input, &out).with_context(|| format!("rendering {}", args.input.display()))?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}
