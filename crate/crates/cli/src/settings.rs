//! Flat `key = value` settings: profile defaults, then a config file, then
//! command-line flags.

use std::path::Path;

use anyhow::{bail, Context};
use macnet::arch::MacNetConfig;
use macnet::data::{SplitRatios, SynthConfig};
use macnet::train::{LrSchedule, TrainRunConfig};

use crate::UsageError;

pub trait Settings {
    /// Sets one key; `Err` carries a reason for a bad value or unknown key.
    fn apply(&mut self, key: &str, value: &str) -> Result<(), String>;
    fn entries(&self) -> Vec<(&'static str, String)>;

    fn snapshot(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> anyhow::Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!(UsageError(format!("{}:{}: expected `key = value`", path.display(), i + 1)));
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies the config file (if any) and then the flag overrides.
pub fn resolve<S: Settings>(mut settings: S, config: Option<&Path>, overrides: Vec<(&str, String)>) -> anyhow::Result<S> {
    if let Some(path) = config {
        for (line, k, v) in read_config_file(path)? {
            settings
                .apply(&k, &v)
                .map_err(|e| UsageError(format!("{}:{line}: {e}", path.display())))?;
        }
    }
    for (k, v) in overrides {
        settings
            .apply(k, &v)
            .map_err(|e| UsageError(format!("--{}: {e}", k.replace('_', "-"))))?;
    }
    Ok(settings)
}

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value `{value}`"))
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(|s| parse(s.trim())).collect()
}

/// `a` or `a,b`.
fn parse_pair(value: &str) -> Result<(usize, usize), String> {
    match parse_list::<usize>(value)?[..] {
        [a] => Ok((a, a)),
        [a, b] => Ok((a, b)),
        _ => Err(format!("expected one or two numbers, got `{value}`")),
    }
}

fn show_pair((a, b): (usize, usize)) -> String {
    format!("{a},{b}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be f32 or f64, got `{s}`")),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub classes: usize,
    pub events_per_class: usize,
    pub images_per_event: (usize, usize),
    pub image_size: (usize, usize),
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = SynthConfig::default();
        SynthSettings {
            classes: c.num_classes,
            events_per_class: c.events_per_class,
            images_per_event: c.images_per_event,
            image_size: c.image_size,
            seed: c.seed,
            ratios: SplitRatios::default(),
        }
    }
}

impl SynthSettings {
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_classes: self.classes,
            events_per_class: self.events_per_class,
            images_per_event: self.images_per_event,
            image_size: self.image_size,
            seed: self.seed,
        }
    }
}

fn parse_ratios(value: &str) -> Result<SplitRatios, String> {
    match parse_list::<f64>(value)?[..] {
        [a, b, c] => SplitRatios::new(a, b, c).map_err(|e| e.to_string()),
        _ => Err(format!("expected train,val,test fractions, got `{value}`")),
    }
}

fn show_ratios(r: &SplitRatios) -> String {
    format!("{},{},{}", r.train, r.val, r.test)
}

impl Settings for SynthSettings {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "classes" => self.classes = parse(value)?,
            "events_per_class" => self.events_per_class = parse(value)?,
            "images_per_event" => self.images_per_event = parse_pair(value)?,
            "image_size" => self.image_size = parse_pair(value)?,
            "seed" => self.seed = parse(value)?,
            "ratios" => self.ratios = parse_ratios(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("classes", self.classes.to_string()),
            ("events_per_class", self.events_per_class.to_string()),
            ("images_per_event", show_pair(self.images_per_event)),
            ("image_size", show_pair(self.image_size)),
            ("seed", self.seed.to_string()),
            ("ratios", show_ratios(&self.ratios)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub seed: u64,
    pub model_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub width_multiplier: f64,
    pub stage_depths: [usize; 4],
    pub atrous_branch_width: usize,
    pub input_size: (usize, usize),
    pub dropout: f64,
    pub lr: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub track_train_accuracy: bool,
}

impl TrainSettings {
    /// Laptop-scale defaults.
    pub fn desk() -> Self {
        let schedule = LrSchedule::default();
        let run = TrainRunConfig::default();
        TrainSettings {
            seed: 0,
            model_seed: 0,
            epochs: 30,
            batch_size: 16,
            width_multiplier: 0.125,
            stage_depths: [1, 1, 1, 1],
            atrous_branch_width: 8,
            input_size: (64, 64),
            dropout: 0.5,
            lr: schedule.base_lr,
            lr_step: schedule.step_size_epochs,
            lr_gamma: schedule.gamma,
            momentum: run.momentum,
            weight_decay: run.weight_decay,
            augment: true,
            checkpoint_every: 0,
            precision: Precision::F32,
            track_train_accuracy: true,
        }
    }

    /// Full widths, ResNet-101 depths, 224x224 input, batch 32, 100 epochs.
    pub fn paper_faithful() -> Self {
        let paper = MacNetConfig::paper(1);
        TrainSettings {
            epochs: 100,
            batch_size: 32,
            width_multiplier: 1.0,
            stage_depths: paper.stage_depths,
            atrous_branch_width: paper.atrous_branch_width,
            input_size: paper.input_size,
            ..Self::desk()
        }
    }

    pub fn model_config(&self, num_classes: usize) -> anyhow::Result<MacNetConfig> {
        let cfg = MacNetConfig {
            input_size: self.input_size,
            stage_depths: self.stage_depths,
            atrous_branch_width: self.atrous_branch_width,
            dropout_p: self.dropout,
            ..MacNetConfig::paper(num_classes)
        }
        .with_width_multiplier(self.width_multiplier);
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn run_config(&self, out_dir: Option<&Path>) -> anyhow::Result<TrainRunConfig> {
        let cfg = TrainRunConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            schedule: LrSchedule {
                base_lr: self.lr,
                step_size_epochs: self.lr_step,
                gamma: self.lr_gamma,
            },
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            augment: self.augment,
            checkpoint_every: self.checkpoint_every,
            out_dir: out_dir.map(Path::to_path_buf),
            track_train_accuracy: self.track_train_accuracy,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

impl Settings for TrainSettings {
    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = parse(value)?,
            "model_seed" => self.model_seed = parse(value)?,
            "epochs" => {
                self.epochs = parse(value)?;
                if self.epochs == 0 {
                    return Err("epochs must be at least 1".into());
                }
            }
            "batch_size" => {
                self.batch_size = parse(value)?;
                if self.batch_size == 0 {
                    return Err("batch size must be at least 1".into());
                }
            }
            "width_multiplier" => {
                self.width_multiplier = parse(value)?;
                if self.width_multiplier.is_nan() || self.width_multiplier <= 0.0 {
                    return Err("width multiplier must be positive".into());
                }
            }
            "stage_depths" => {
                self.stage_depths = parse_list::<usize>(value)?
                    .try_into()
                    .map_err(|_| format!("expected four depths, got `{value}`"))?
            }
            "atrous_branch_width" => self.atrous_branch_width = parse(value)?,
            "input_size" => self.input_size = parse_pair(value)?,
            "dropout" => self.dropout = parse(value)?,
            "lr" => self.lr = parse(value)?,
            "lr_step" => self.lr_step = parse(value)?,
            "lr_gamma" => self.lr_gamma = parse(value)?,
            "momentum" => self.momentum = parse(value)?,
            "weight_decay" => self.weight_decay = parse(value)?,
            "augment" => self.augment = parse(value)?,
            "checkpoint_every" => self.checkpoint_every = parse(value)?,
            "precision" => self.precision = value.parse()?,
            "track_train_accuracy" => self.track_train_accuracy = parse(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let depths = self.stage_depths.map(|d| d.to_string()).join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("model_seed", self.model_seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("width_multiplier", self.width_multiplier.to_string()),
            ("stage_depths", depths),
            ("atrous_branch_width", self.atrous_branch_width.to_string()),
            ("input_size", show_pair(self.input_size)),
            ("dropout", self.dropout.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_step", self.lr_step.to_string()),
            ("lr_gamma", self.lr_gamma.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("augment", self.augment.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("precision", self.precision.to_string()),
            ("track_train_accuracy", self.track_train_accuracy.to_string()),
        ]
    }
}
