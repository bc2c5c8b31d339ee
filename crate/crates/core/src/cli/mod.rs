//! Command-line pipeline: `gen`, `pairs`, `train`, `eval`, `iaa`, `sim`, `compare`.
//!
//! Every command reads one experiment document (`--config`), applies flag
//! overrides, derives all sub-seeds from the root seed and prints a JSON
//! summary on stdout. Artifacts land in `--out`.

mod commands;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use commands::{cmd_compare, cmd_eval, cmd_gen, cmd_iaa, cmd_pairs, cmd_sim, cmd_train};

use crate::dataflow::{CorpusConfig, PairConfig, PairStrategy};
use crate::grposim::SimConfig;
use crate::heads::HeadKind;
use crate::losses::{LossConfig, LossKind};
use crate::trainer::TrainConfig;
use crate::{seed, Error, Result};

/// One training setup in a comparison. Unset fields keep the base setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: Option<String>,
    pub loss: Option<LossConfig>,
    pub head: Option<HeadKind>,
    /// Rebuild the training pairs with this strategy.
    pub pairing: Option<PairStrategy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub variants: Vec<VariantSpec>,
    /// Training seeds per variant.
    pub repeats: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let loss = |kind| VariantSpec {
            name: None,
            loss: Some(LossConfig::new(kind)),
            head: None,
            pairing: None,
        };
        CompareConfig {
            variants: vec![loss(LossKind::Bt), loss(LossKind::BtWt)],
            repeats: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: CorpusConfig,
    pub pairs: PairConfig,
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub compare: CompareConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("out"),
            corpus: CorpusConfig::default(),
            pairs: PairConfig::default(),
            train: TrainConfig::default(),
            sim: SimConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            Error::config(field, e.into_inner().to_string())
        })
    }

    /// Overwrite every nested seed with one derived from the root seed.
    pub fn resolve_seeds(&mut self) {
        let root = self.seed;
        self.corpus.seed = seed::derive(root, "cli/corpus");
        self.pairs.seed = seed::derive(root, "cli/pairs");
        self.train.seed = seed::derive(root, "cli/train");
        self.sim.seed = seed::derive(root, "cli/sim");
    }

    pub fn compare_seeds(&self) -> Vec<u64> {
        (0..self.compare.repeats)
            .map(|k| seed::derive(self.seed, &format!("cli/compare/{k}")))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Experiment document (JSON); flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory, also where upstream artifacts are read from.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reject unknown fields in input records.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Subcommand, Clone, Debug)]
pub enum Command {
    /// Generate samples and annotations.
    Gen,
    /// Build training pairs from consensus labels.
    Pairs,
    /// Train a reward model on the pairs.
    Train,
    /// Evaluate a checkpoint on the held-out splits.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Agreement statistics of an annotation file.
    Iaa {
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Optimize the toy policy against a checkpoint.
    Sim {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train several variants under several seeds.
    Compare {
        /// Comma-separated losses, e.g. `BT,BTWT,BTWT+BCE`.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
}

#[derive(Parser, Clone, Debug)]
#[command(name = "rmlab", version, about = "Desk-scale reward-model experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Parse a loss label such as `BT`, `BTWT` or `BTWT+BCE(0.5)`.
pub fn parse_loss(label: &str) -> Result<LossConfig> {
    let (kind, bce) = match label.split_once('+') {
        Some((k, b)) => (k, Some(b)),
        None => (label, None),
    };
    let kind = match kind.trim().to_ascii_uppercase().as_str() {
        "BT" => LossKind::Bt,
        "BTWT" | "BT-WT" => LossKind::BtWt,
        "BTT" => LossKind::Btt,
        other => return Err(Error::config("variants", format!("unknown loss `{other}`"))),
    };
    let mut cfg = LossConfig::new(kind);
    if let Some(b) = bce {
        let b = b.trim();
        let weight = if b.eq_ignore_ascii_case("BCE") {
            1.0
        } else {
            b.strip_prefix("BCE(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|w| w.parse::<f64>().ok())
                .ok_or_else(|| Error::config("variants", format!("cannot read `{b}`")))?
        };
        cfg = cfg.with_bce(weight);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve the experiment: defaults, then the file, then flags.
pub fn resolve(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.resolve_seeds();
    Ok(cfg)
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        _ if err.is_numeric() => EXIT_NUMERIC,
        Error::Config { .. } | Error::Invalid(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_DATA,
    }
}

/// Run a parsed command and return its JSON summary.
pub fn run(cli: &Cli) -> Result<serde_json::Value> {
    let mut cfg = resolve(&cli.common)?;
    let strict = cli.common.strict;
    match &cli.command {
        Command::Gen => cmd_gen(&cfg),
        Command::Pairs => cmd_pairs(&cfg, strict),
        Command::Train => cmd_train(&cfg, strict),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint.as_deref(), strict),
        Command::Iaa { annotations } => cmd_iaa(&cfg, annotations.as_deref(), strict),
        Command::Sim { checkpoint } => cmd_sim(&cfg, checkpoint.as_deref()),
        Command::Compare { variants } => {
            if !variants.is_empty() {
                cfg.compare.variants = variants
                    .iter()
                    .map(|v| {
                        Ok(VariantSpec {
                            name: Some(v.clone()),
                            loss: Some(parse_loss(v)?),
                            head: None,
                            pairing: None,
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            cmd_compare(&cfg, strict)
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
