use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "docenhance",
    version,
    about = "Enhance and binarize degraded document images with a transformer auto-encoder",
    args_override_self = true
)]
pub struct Cli {
    /// key=value file of flag defaults; explicit flags win
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a dataset of degraded/gt pairs and write a checkpoint
    Train(TrainArgs),
    /// Enhance one image with a trained checkpoint
    Binarize(BinarizeArgs),
    /// Score predictions against ground truth (PSNR, FM, Fps, DRD)
    Evaluate(EvaluateArgs),
    /// Write encoder self-attention maps for chosen query tokens
    Attention(AttentionArgs),
    /// Generate synthetic degraded/gt page pairs
    Synth(SynthArgs),
    /// Describe a checkpoint
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root holding degraded/ and gt/, or a manifest file
    #[arg(long)]
    pub data: PathBuf,
    /// Size preset: small, base or large
    #[arg(long, default_value = "base")]
    pub variant: String,
    /// Override the preset's blocks per stack
    #[arg(long)]
    pub layers: Option<usize>,
    /// Override the preset's embedding width
    #[arg(long)]
    pub dim: Option<usize>,
    /// Override the preset's attention heads
    #[arg(long)]
    pub heads: Option<usize>,
    /// Patch side in pixels
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    /// Window side in pixels
    #[arg(long, default_value_t = 256)]
    pub window: usize,
    /// Window stride in pixels [default: window/2]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Total optimizer steps [default: 1000, or the checkpoint's total on --resume]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Windows per step
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Peak learning rate
    #[arg(long, default_value_t = 1.5e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 0.05)]
    pub weight_decay: f64,
    /// Warmup steps [default: 5% of --steps]
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Global gradient-norm clip, 0 to disable
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output checkpoint
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Loss log (step<TAB>loss) [default: <out>.loss.tsv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write the checkpoint every N steps, 0 to disable
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// End this session after step N; continue later with --resume
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BinarizeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pixels at or below this become foreground
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Write the continuous grayscale output instead
    #[arg(long)]
    pub no_threshold: bool,
    /// Windows per forward pass
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Prediction image or directory
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth image or directory
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report here
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Binarization threshold for non-binary predictions
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

/// Query tokens: `3,17,40` or `random:K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenSpec {
    List(Vec<usize>),
    Random(usize),
}

impl FromStr for TokenSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(k) = s.strip_prefix("random:") {
            let k = k.parse().map_err(|_| format!("bad count in {s:?}"))?;
            return Ok(TokenSpec::Random(k));
        }
        let list = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| format!("bad token index {t:?}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TokenSpec::List(list))
    }
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated token indices or random:K
    #[arg(long, default_value = "random:4")]
    pub tokens: TokenSpec,
    /// Encoder layer, 0-based [default: last]
    #[arg(long)]
    pub layer: Option<usize>,
    /// Head, 0-based [default: 1, the second head]
    #[arg(long)]
    pub head: Option<usize>,
    /// Which window of the padded page to inspect, row-major
    #[arg(long, default_value_t = 0)]
    pub window_index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub height: usize,
    pub width: usize,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |v: &str| v.parse::<usize>().ok().filter(|&n| n > 0);
        match (parse(h), parse(w)) {
            (Some(height), Some(width)) => Ok(Size { height, width }),
            _ => Err(format!("expected positive HxW, got {s:?}")),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Page size as HxW
    #[arg(long, default_value = "256x256")]
    pub size: Size,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Background stain amplitude in [0,1]
    #[arg(long, default_value_t = 0.0)]
    pub stain: f32,
    /// Salt-and-pepper rate in [0,1]
    #[arg(long, default_value_t = 0.0)]
    pub saltpepper: f32,
    /// Gaussian blur sigma in pixels
    #[arg(long, default_value_t = 0.0)]
    pub blur: f32,
    /// Bleed-through opacity in [0,1]
    #[arg(long, default_value_t = 0.0)]
    pub bleed: f32,
    /// Chance that a glyph slot holds ink
    #[arg(long, default_value_t = 0.9)]
    pub density: f32,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_specs() {
        assert_eq!("3,17, 40".parse(), Ok(TokenSpec::List(vec![3, 17, 40])));
        assert_eq!("random:4".parse(), Ok(TokenSpec::Random(4)));
        assert!("random:x".parse::<TokenSpec>().is_err());
        assert!("a,b".parse::<TokenSpec>().is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(
            "64x80".parse(),
            Ok(Size {
                height: 64,
                width: 80
            })
        );
        assert!("64".parse::<Size>().is_err());
        assert!("0x4".parse::<Size>().is_err());
    }

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
