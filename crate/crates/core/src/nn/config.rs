use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Dropout probability used at both dropout sites.
pub const DROPOUT_P: f64 = 0.5;

/// Output maps are single-channel foreground probabilities.
pub const OUTPUT_CHANNELS: usize = 1;

/// One resolution level of the encoder (mirrored in the decoder).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Level {
    pub width: usize,
    pub kernel: usize,
    pub convs: usize,
}

impl Level {
    pub const fn new(width: usize, kernel: usize, convs: usize) -> Self {
        Self { width, kernel, convs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropoutSite {
    /// After the last convolutional block of the encoder.
    EncoderEnd,
    /// Immediately before the final transposed convolution.
    BeforeLastDeconv,
}

impl DropoutSite {
    pub fn as_str(self) -> &'static str {
        match self {
            DropoutSite::EncoderEnd => "encoder_end",
            DropoutSite::BeforeLastDeconv => "before_last_deconv",
        }
    }
}

impl FromStr for DropoutSite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "encoder_end" => Ok(DropoutSite::EncoderEnd),
            "before_last_deconv" => Ok(DropoutSite::BeforeLastDeconv),
            other => Err(invalid!("unknown dropout site `{other}`")),
        }
    }
}

/// Declarative encoder-decoder plan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub name: String,
    pub input_channels: usize,
    pub levels: Vec<Level>,
    pub dropout_sites: BTreeSet<DropoutSite>,
}

fn both_sites() -> BTreeSet<DropoutSite> {
    [DropoutSite::EncoderEnd, DropoutSite::BeforeLastDeconv].into_iter().collect()
}

impl ModelConfig {
    /// Localization network: three levels, wide windows at the two finer
    /// levels.
    pub fn cdnn_i(input_channels: usize) -> Self {
        Self {
            name: "cdnn-i".into(),
            input_channels,
            levels: vec![Level::new(28, 5, 1), Level::new(56, 5, 1), Level::new(112, 3, 1)],
            dropout_sites: both_sites(),
        }
    }

    /// Fine segmentation network: 3×3 windows, twice the channels of
    /// `cdnn-i` at every shared depth, one extra level, two convolutions per
    /// level.
    pub fn cdnn_ii(input_channels: usize) -> Self {
        Self {
            name: "cdnn-ii".into(),
            input_channels,
            levels: vec![Level::new(56, 3, 2), Level::new(112, 3, 2), Level::new(224, 3, 2), Level::new(448, 3, 2)],
            dropout_sites: both_sites(),
        }
    }

    /// Two-level network for desk-scale runs.
    pub fn reduced(name: &str, input_channels: usize, widths: [usize; 2], kernel: usize) -> Self {
        Self {
            name: name.into(),
            input_channels,
            levels: widths.iter().map(|&w| Level::new(w, kernel, 1)).collect(),
            dropout_sites: both_sites(),
        }
    }

    pub fn preset(name: &str, input_channels: usize) -> Result<Self> {
        match name {
            "cdnn-i" => Ok(Self::cdnn_i(input_channels)),
            "cdnn-ii" => Ok(Self::cdnn_ii(input_channels)),
            "reduced" => Ok(Self::reduced("reduced", input_channels, [16, 32], 3)),
            other => Err(invalid!("unknown model preset `{other}` (expected cdnn-i, cdnn-ii or reduced)")),
        }
    }

    pub fn with_input_channels(mut self, c: usize) -> Self {
        self.input_channels = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() || self.name.contains(char::is_whitespace) {
            return Err(invalid!("model name must be a non-empty identifier, got `{}`", self.name));
        }
        if self.input_channels == 0 {
            return Err(invalid!("input_channels must be positive"));
        }
        if self.levels.is_empty() {
            return Err(invalid!("model `{}` has no levels", self.name));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.width == 0 || l.convs == 0 {
                return Err(invalid!("level {i}: width and convs must be positive"));
            }
            if l.kernel % 2 == 0 {
                return Err(invalid!("level {i}: kernel size {} is not odd", l.kernel));
            }
        }
        if self.levels.len() < 2 && self.dropout_sites.contains(&DropoutSite::BeforeLastDeconv) {
            return Err(invalid!("a single-level model has no deconvolution to place dropout before"));
        }
        Ok(())
    }

    /// Spatial sides must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.levels.len() - 1)
    }

    /// Plain-text form stored in checkpoints.
    pub fn to_text(&self) -> String {
        let levels: Vec<String> =
            self.levels.iter().map(|l| format!("{}:{}:{}", l.width, l.kernel, l.convs)).collect();
        let sites: Vec<&str> = self.dropout_sites.iter().map(|s| s.as_str()).collect();
        format!(
            "name = {}\ninput_channels = {}\nlevels = {}\ndropout_sites = {}\noutput_channels = {}\n",
            self.name,
            self.input_channels,
            levels.join(","),
            sites.join(","),
            OUTPUT_CHANNELS
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input_channels = None;
        let mut levels = None;
        let mut sites = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Config { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let v = v.trim();
            match k.trim() {
                "name" => name = Some(v.to_string()),
                "input_channels" => input_channels = Some(v.parse().map_err(|_| err(format!("bad channel count `{v}`")))?),
                "levels" => levels = Some(parse_levels(v).map_err(|e| err(e.to_string()))?),
                "dropout_sites" => {
                    for s in v.split(',').filter(|s| !s.trim().is_empty()) {
                        sites.insert(s.parse().map_err(|e: Error| err(e.to_string()))?);
                    }
                }
                "output_channels" => {
                    if v != "1" {
                        return Err(err(format!("only single-channel output is supported, got {v}")));
                    }
                }
                other => return Err(err(format!("unknown model key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Config { line: 0, msg: format!("model config lacks `{k}`") };
        let cfg = Self {
            name: name.ok_or_else(|| missing("name"))?,
            input_channels: input_channels.ok_or_else(|| missing("input_channels"))?,
            levels: levels.ok_or_else(|| missing("levels"))?,
            dropout_sites: sites,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `width:kernel:convs` triples separated by commas.
pub fn parse_levels(s: &str) -> Result<Vec<Level>> {
    s.split(',')
        .map(|part| {
            let nums: Vec<&str> = part.trim().split(':').collect();
            let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| invalid!("bad level `{part}`"));
            match nums.as_slice() {
                [w, k, c] => Ok(Level::new(parse(w)?, parse(k)?, parse(c)?)),
                [w, k] => Ok(Level::new(parse(w)?, parse(k)?, 1)),
                _ => Err(invalid!("level `{part}` is not width:kernel[:convs]")),
            }
        })
        .collect()
}

/// One entry of the layer plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layer {
    Conv { level: usize, in_ch: usize, out_ch: usize, kernel: usize },
    Pool,
    Upsample,
    Deconv { level: usize, in_ch: usize, out_ch: usize, kernel: usize },
    Dropout { p: f64, site: DropoutSite },
    Output { in_ch: usize },
}

impl Layer {
    /// Convolutions, transposed convolutions, pooling, upsampling and the
    /// output layer count as layers; dropout does not.
    pub fn counts_as_layer(&self) -> bool {
        !matches!(self, Layer::Dropout { .. })
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Layer::Conv { level, in_ch, out_ch, kernel } => write!(f, "conv{kernel}x{kernel} L{level} {in_ch}->{out_ch}"),
            Layer::Pool => write!(f, "maxpool2x"),
            Layer::Upsample => write!(f, "upsample2x"),
            Layer::Deconv { level, in_ch, out_ch, kernel } => {
                write!(f, "deconv{kernel}x{kernel} L{level} {in_ch}->{out_ch}")
            }
            Layer::Dropout { p, site } => write!(f, "dropout p={p} ({})", site.as_str()),
            Layer::Output { in_ch } => write!(f, "conv1x1 {in_ch}->1 + sigmoid"),
        }
    }
}

/// Expands a config into its ordered layer plan. Every conv/deconv is
/// followed by batch norm and ReLU at run time. Decoder level `l` mirrors
/// the encoder convolutions that left it, so its deconvolutions use the
/// kernel size of level `l + 1`.
pub fn layer_plan(cfg: &ModelConfig) -> Vec<Layer> {
    let mut plan = Vec::new();
    let mut ch = cfg.input_channels;
    let last = cfg.levels.len() - 1;
    for (li, level) in cfg.levels.iter().enumerate() {
        for _ in 0..level.convs {
            plan.push(Layer::Conv { level: li, in_ch: ch, out_ch: level.width, kernel: level.kernel });
            ch = level.width;
        }
        if li < last {
            plan.push(Layer::Pool);
        }
    }
    if cfg.dropout_sites.contains(&DropoutSite::EncoderEnd) {
        plan.push(Layer::Dropout { p: DROPOUT_P, site: DropoutSite::EncoderEnd });
    }
    for li in (0..last).rev() {
        plan.push(Layer::Upsample);
        let level = cfg.levels[li];
        let kernel = cfg.levels[li + 1].kernel;
        for _ in 0..level.convs {
            plan.push(Layer::Deconv { level: li, in_ch: ch, out_ch: level.width, kernel });
            ch = level.width;
        }
    }
    if cfg.dropout_sites.contains(&DropoutSite::BeforeLastDeconv) {
        if let Some(pos) = plan.iter().rposition(|l| matches!(l, Layer::Deconv { .. })) {
            plan.insert(pos, Layer::Dropout { p: DROPOUT_P, site: DropoutSite::BeforeLastDeconv });
        }
    }
    plan.push(Layer::Output { in_ch: ch });
    plan
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [ModelConfig::cdnn_i(3), ModelConfig::cdnn_ii(4), ModelConfig::reduced("r", 3, [8, 16], 3)] {
            assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        let mut cfg = ModelConfig::cdnn_i(3);
        cfg.levels[1].kernel = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dropout_sites_in_plan() {
        let plan = layer_plan(&ModelConfig::cdnn_i(3));
        let drop_positions: Vec<usize> =
            plan.iter().enumerate().filter(|(_, l)| matches!(l, Layer::Dropout { .. })).map(|(i, _)| i).collect();
        assert_eq!(drop_positions.len(), 2);
        // Encoder end: right after the deepest conv.
        assert!(matches!(plan[drop_positions[0] - 1], Layer::Conv { level: 2, .. }));
        // Before the final deconv, which is the layer right after it.
        assert!(matches!(plan[drop_positions[1] + 1], Layer::Deconv { level: 0, .. }));
        assert!(!plan[drop_positions[1] + 2..].iter().any(|l| matches!(l, Layer::Deconv { .. })));
    }

    #[test]
    fn doubled_channels() {
        let (a, b) = (ModelConfig::cdnn_i(3), ModelConfig::cdnn_ii(3));
        for (la, lb) in a.levels.iter().zip(&b.levels) {
            assert_eq!(lb.width, 2 * la.width);
            assert!(lb.kernel <= la.kernel);
        }
    }
}
