use crate::error::{Error, Result};
use crate::ops::{Conv2dSpec, DEFAULT_BN_MOMENTUM};

/// Number of image-pyramid levels (the input plus four halvings).
pub const PYRAMID_LEVELS: usize = 5;

/// Spatial reduction of the last residual stage relative to the input.
pub const TOTAL_STRIDE: usize = 16;

/// Bottleneck expansion: a stage producing `c` channels works at `c / 4`
/// inside each block.
pub const BOTTLENECK_EXPANSION: usize = 4;

const PAPER_STAGE_CHANNELS: [usize; 4] = [256, 512, 1024, 2048];
const PAPER_STEM_CHANNELS: usize = 64;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MacNetConfig {
    pub num_classes: usize,
    /// `(height, width)`, both divisible by 16.
    pub input_size: (usize, usize),
    pub atrous_rates: Vec<usize>,
    /// Output channels of each rate branch inside an atrous block.
    pub atrous_branch_width: usize,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub stem_channels: usize,
    pub fc_widths: (usize, usize),
    pub dropout_p: f64,
    pub bn_enabled: bool,
    pub bn_momentum: f64,
}

impl MacNetConfig {
    /// Full-width network with ResNet-101 stage depths.
    pub fn paper(num_classes: usize) -> Self {
        MacNetConfig {
            num_classes,
            input_size: (224, 224),
            atrous_rates: vec![1, 2, 3],
            atrous_branch_width: 32,
            stage_channels: PAPER_STAGE_CHANNELS,
            stage_depths: [3, 4, 23, 3],
            stem_channels: PAPER_STEM_CHANNELS,
            fc_widths: (1024, 512),
            dropout_p: 0.5,
            bn_enabled: true,
            bn_momentum: DEFAULT_BN_MOMENTUM,
        }
    }

    /// Laptop-scale profile: 1/8 width, one block per stage, 64x64 input.
    pub fn desk(num_classes: usize) -> Self {
        MacNetConfig {
            input_size: (64, 64),
            atrous_branch_width: 8,
            stage_depths: [1, 1, 1, 1],
            ..Self::paper(num_classes)
        }
        .with_width_multiplier(0.125)
    }

    /// Scales stem and stage widths relative to the full-width network.
    pub fn with_width_multiplier(mut self, multiplier: f64) -> Self {
        let scale = |c: usize| ((c as f64 * multiplier).round() as usize).max(1);
        self.stage_channels = PAPER_STAGE_CHANNELS.map(scale);
        self.stem_channels = scale(PAPER_STEM_CHANNELS);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % TOTAL_STRIDE != 0 || w % TOTAL_STRIDE != 0 {
            return Err(Error::config(format!(
                "input size {h}x{w} must be positive and divisible by {TOTAL_STRIDE}"
            )));
        }
        if self.atrous_rates.is_empty() || self.atrous_rates.contains(&0) {
            return Err(Error::config("atrous rates must be a non-empty list of positive values"));
        }
        if self.atrous_branch_width == 0 || self.stem_channels == 0 {
            return Err(Error::config("branch width and stem channels must be positive"));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c < BOTTLENECK_EXPANSION || c % BOTTLENECK_EXPANSION != 0 {
                return Err(Error::config(format!(
                    "stage {} has {c} channels; must be a positive multiple of {BOTTLENECK_EXPANSION}",
                    i + 1
                )));
            }
        }
        for pair in self.stage_channels.windows(2) {
            if pair[1] != 2 * pair[0] {
                return Err(Error::config(format!(
                    "stage channels must double from stage to stage, got {:?}",
                    self.stage_channels
                )));
            }
        }
        if self.stage_depths.contains(&0) {
            return Err(Error::config("every stage needs at least one block"));
        }
        if self.fc_widths.0 == 0 || self.fc_widths.1 == 0 {
            return Err(Error::config("fully connected widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout must be in [0, 1), got {}", self.dropout_p)));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config(format!("bn momentum must be in [0, 1], got {}", self.bn_momentum)));
        }
        Ok(())
    }

    pub fn atrous_out_channels(&self) -> usize {
        self.atrous_branch_width * self.atrous_rates.len()
    }

    /// Channels the adapter after atrous block `level` must produce: the
    /// stem width for level 0, otherwise the matching stage width.
    pub fn fusion_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.stem_channels
        } else {
            self.stage_channels[level - 1]
        }
    }

    /// `(channels, height, width)` of the tensors joined at each of the
    /// five fusion points, checked to agree on both sides.
    pub fn fusion_plan(&self) -> Result<Vec<(usize, usize, usize)>> {
        self.validate()?;
        let (h, w) = self.input_size;
        let mut main = (self.stem_channels, h, w);
        let mut plan = Vec::with_capacity(PYRAMID_LEVELS);
        for level in 0..PYRAMID_LEVELS {
            if level > 0 {
                let cout = self.stage_channels[level - 1];
                let stride2 = Conv2dSpec::new(cout / BOTTLENECK_EXPANSION, cout / BOTTLENECK_EXPANSION, (3, 3))
                    .with_stride(2)
                    .with_padding(1);
                let (oh, ow) = stride2.output_extent(main.1, main.2)?;
                main = (cout, oh, ow);
            }
            let factor = 1 << level;
            let level_extent = (h / factor, w / factor);
            for &rate in &self.atrous_rates {
                let branch = Conv2dSpec::same(3, self.atrous_branch_width, 3, rate);
                let extent = branch.output_extent(level_extent.0, level_extent.1)?;
                if extent != level_extent {
                    return Err(Error::config(format!(
                        "atrous branch at rate {rate} maps {level_extent:?} to {extent:?}"
                    )));
                }
            }
            let side = (self.fusion_channels(level), level_extent.0, level_extent.1);
            if main != side {
                return Err(Error::config(format!(
                    "fusion {level}: main path {main:?} vs pyramid path {side:?}"
                )));
            }
            plan.push(main);
        }
        Ok(plan)
    }

    /// Closed-form count of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        // convolutions carry a bias only when no batch norm follows them
        let conv_bn = |cin: usize, cout: usize, k: usize| cin * cout * k * k + if self.bn_enabled { 2 * cout } else { cout };
        let conv_bias = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let linear = |d: usize, m: usize| d * m + m;

        let stem = conv_bn(3, self.stem_channels, 3);
        let atrous_block = self.atrous_rates.len() * conv_bn(3, self.atrous_branch_width, 3);
        let adapters: usize = (0..PYRAMID_LEVELS)
            .map(|l| conv_bias(self.atrous_out_channels(), self.fusion_channels(l), 1))
            .sum();
        let mut stages = 0;
        let mut cin = self.stem_channels;
        for (&cout, &depth) in self.stage_channels.iter().zip(&self.stage_depths) {
            let mid = cout / BOTTLENECK_EXPANSION;
            let body = |cin: usize| conv_bn(cin, mid, 1) + conv_bn(mid, mid, 3) + conv_bn(mid, cout, 1);
            stages += body(cin) + conv_bn(cin, cout, 1);
            stages += (depth - 1) * body(cout);
            cin = cout;
        }
        let head = linear(self.stage_channels[3], self.fc_widths.0)
            + linear(self.fc_widths.0, self.fc_widths.1)
            + linear(self.fc_widths.1, self.num_classes);
        stem + PYRAMID_LEVELS * atrous_block + adapters + stages + head
    }

    /// `key = value` lines describing every field.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("num_classes".into(), self.num_classes.to_string()),
            ("input_size".into(), format!("{},{}", self.input_size.0, self.input_size.1)),
            ("atrous_rates".into(), list(&self.atrous_rates)),
            ("atrous_branch_width".into(), self.atrous_branch_width.to_string()),
            ("stage_channels".into(), list(&self.stage_channels)),
            ("stage_depths".into(), list(&self.stage_depths)),
            ("stem_channels".into(), self.stem_channels.to_string()),
            ("fc_widths".into(), format!("{},{}", self.fc_widths.0, self.fc_widths.1)),
            ("dropout_p".into(), self.dropout_p.to_string()),
            ("bn_enabled".into(), self.bn_enabled.to_string()),
            ("bn_momentum".into(), self.bn_momentum.to_string()),
        ]
    }

    /// Inverse of [`to_key_values`](Self::to_key_values); every field must
    /// be present and no other keys are accepted.
    pub fn from_key_values<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::paper(1);
        let mut seen = Vec::new();
        for (key, value) in pairs {
            let bad = || Error::config(format!("invalid value `{value}` for `{key}`"));
            let list = || -> Result<Vec<usize>> { value.split(',').map(|s| s.trim().parse::<usize>().map_err(|_| bad())).collect() };
            let pair = || -> Result<(usize, usize)> {
                match list()?[..] {
                    [a, b] => Ok((a, b)),
                    _ => Err(bad()),
                }
            };
            let four = || -> Result<[usize; 4]> { list()?.try_into().map_err(|_| bad()) };
            match key {
                "num_classes" => cfg.num_classes = value.parse().map_err(|_| bad())?,
                "input_size" => cfg.input_size = pair()?,
                "atrous_rates" => cfg.atrous_rates = list()?,
                "atrous_branch_width" => cfg.atrous_branch_width = value.parse().map_err(|_| bad())?,
                "stage_channels" => cfg.stage_channels = four()?,
                "stage_depths" => cfg.stage_depths = four()?,
                "stem_channels" => cfg.stem_channels = value.parse().map_err(|_| bad())?,
                "fc_widths" => cfg.fc_widths = pair()?,
                "dropout_p" => cfg.dropout_p = value.parse().map_err(|_| bad())?,
                "bn_enabled" => cfg.bn_enabled = value.parse().map_err(|_| bad())?,
                "bn_momentum" => cfg.bn_momentum = value.parse().map_err(|_| bad())?,
                other => return Err(Error::config(format!("unknown config key `{other}`"))),
            }
            seen.push(key.to_string());
        }
        for (key, _) in cfg.to_key_values() {
            if !seen.contains(&key) {
                return Err(Error::config(format!("missing config key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
