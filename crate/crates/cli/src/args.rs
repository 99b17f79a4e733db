use std::collections::HashSet;
use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lovasz_core::{Gamma, Inference, LossSpec};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "lovasz", version, about = "Submodular losses, the Lovász hinge and rescaling surrogates")]
pub struct Cli {
    /// key=value file supplying defaults for any flag
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Brute-force property report for a loss
    #[command(allow_negative_numbers = true)]
    Check(CheckArgs),
    /// Surrogate surface over a grid of margins for a p = 2 loss
    #[command(allow_negative_numbers = true)]
    Surface(SurfaceArgs),
    /// Synthetic early-detection dataset
    Synth(SynthArgs),
    /// Cutting-plane training on a dataset file
    #[command(allow_negative_numbers = true)]
    Train(TrainArgs),
    /// Mean test losses of a saved model
    #[command(allow_negative_numbers = true)]
    Eval(EvalArgs),
    /// Cross table of training surrogates against test losses
    #[command(allow_negative_numbers = true)]
    Compare(CompareArgs),
    /// Duality-gap traces per surrogate
    #[command(allow_negative_numbers = true)]
    Gap(GapArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    Hamming,
    Jaccard,
    Capped,
    #[value(name = "concave_modular")]
    ConcaveModular,
    #[value(name = "exp_size")]
    ExpSize,
    #[value(name = "sqrt_modular")]
    SqrtModular,
    Early,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SurrogateName {
    Lovasz,
    Margin,
    Slack,
    /// Lovász hinge of the Hamming loss, i.e. per-element hinge
    Zeroone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InferenceName {
    Exact,
    Greedy,
}

impl From<InferenceName> for Inference {
    fn from(i: InferenceName) -> Self {
        match i {
            InferenceName::Exact => Inference::Exact,
            InferenceName::Greedy => Inference::Greedy,
        }
    }
}

fn parse_gamma(s: &str) -> Result<Gamma, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Gamma::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(Gamma::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got `{s}`")),
    }
}

#[derive(Clone, Debug, Args)]
pub struct LossArgs {
    #[arg(long, value_enum)]
    pub loss: Option<LossName>,
    /// Table values indexed by subset mask
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    /// Per-element weights (capped, concave_modular, sqrt_modular)
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    #[arg(long)]
    pub lmax: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl LossArgs {
    pub fn spec(&self, default: LossName) -> Result<LossSpec, CliError> {
        let need_beta = |name: &str| {
            self.beta.clone().ok_or_else(|| CliError::Usage(format!("--loss {name} needs --beta")))
        };
        Ok(match self.loss.unwrap_or(default) {
            LossName::Hamming => LossSpec::Hamming,
            LossName::Jaccard => LossSpec::Jaccard,
            LossName::Early => LossSpec::EarlyDetection,
            LossName::Capped => LossSpec::CappedWeighted {
                beta: need_beta("capped")?,
                l_max: self.lmax.ok_or_else(|| CliError::Usage("--loss capped needs --lmax".into()))?,
            },
            LossName::ConcaveModular => LossSpec::ConcavePlusModular { beta: need_beta("concave_modular")? },
            LossName::ExpSize => LossSpec::ExpSize { alpha: self.alpha.unwrap_or(1.0) },
            LossName::SqrtModular => LossSpec::SqrtModular { weights: need_beta("sqrt_modular")? },
            LossName::Table => LossSpec::Table {
                values: self.values.clone().ok_or_else(|| CliError::Usage("--loss table needs --values".into()))?,
            },
        })
    }
}

/// Base-set size implied by the loss flags, reconciled with `--p`.
pub fn base_size(spec: &LossSpec, p: Option<usize>, default: usize) -> Result<usize, CliError> {
    let implied = match spec {
        LossSpec::Table { values } => {
            if !values.len().is_power_of_two() {
                return Err(CliError::Usage(format!("--values needs 2^p entries, got {}", values.len())));
            }
            Some(values.len().trailing_zeros() as usize)
        }
        LossSpec::CappedWeighted { beta, .. } | LossSpec::ConcavePlusModular { beta } => Some(beta.len()),
        LossSpec::SqrtModular { weights } => Some(weights.len()),
        _ => None,
    };
    match (implied, p) {
        (Some(a), Some(b)) if a != b => Err(CliError::Usage(format!("loss parameters imply p = {a}, but --p is {b}"))),
        (Some(a), _) => Ok(a),
        (None, Some(b)) => Ok(b),
        (None, None) => Ok(default),
    }
}

#[derive(Clone, Debug, Args)]
pub struct TrainingArgs {
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iterations: usize,
    #[arg(long, value_enum, default_value_t = InferenceName::Exact)]
    pub inference: InferenceName,
    #[arg(long, value_parser = parse_gamma, default_value = "auto")]
    pub gamma: Gamma,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random triples and points for the convexity and dominance probes
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
}

#[derive(Clone, Debug, Args)]
pub struct SurfaceArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, value_enum, default_value_t = SurrogateName::Lovasz)]
    pub surrogate: SurrogateName,
    #[arg(long, value_enum, default_value_t = InferenceName::Exact)]
    pub inference: InferenceName,
    #[arg(long, value_parser = parse_gamma, default_value = "auto")]
    pub gamma: Gamma,
    #[arg(long, default_value_t = -1.0)]
    pub min: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max: f64,
    #[arg(long, default_value_t = 101)]
    pub res: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// Number of bags
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 15)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Omit the constant bias feature
    #[arg(long)]
    pub no_bias: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_enum, default_value_t = SurrogateName::Lovasz)]
    pub surrogate: SurrogateName,
    #[arg(long)]
    pub data: PathBuf,
    /// Model file
    #[arg(long)]
    pub out: PathBuf,
    /// Gap trace CSV; defaults to the model path with `.gap.csv` appended
    #[arg(long)]
    pub gap_out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    /// Training file; synthetic data is drawn per repeat when absent
    #[arg(long, requires = "test_data")]
    pub train_data: Option<PathBuf>,
    #[arg(long, requires = "train_data")]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 500)]
    pub n_test: usize,
    #[arg(long, default_value_t = 15)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Select C per row and repeat on a held-out tail of the training set
    #[arg(long, value_delimiter = ',')]
    pub c_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.25)]
    pub validation_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct GapArgs {
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub training: TrainingArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "lovasz,margin,slack")]
    pub surrogates: Vec<SurrogateName>,
    /// Dataset file; a synthetic set is drawn when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 15)]
    pub p: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `key=value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", k + 1)))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", k + 1)));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn flag_name(arg: &str) -> Option<&str> {
    let rest = arg.strip_prefix("--")?;
    Some(rest.split_once('=').map_or(rest, |(k, _)| k))
}

/// Splices config entries into `argv` after the subcommand, skipping keys
/// already present on the command line. Unknown keys surface as unknown
/// flags.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let strings: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let mut path = None;
    for (i, a) in strings.iter().enumerate() {
        if a == "--config" {
            path = strings.get(i + 1).cloned();
        } else if let Some(v) = a.strip_prefix("--config=") {
            path = Some(v.to_string());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("config {path}: {e}")))?;
    let entries = parse_config(&text)?;
    let present: HashSet<&str> = strings.iter().filter_map(|a| flag_name(a)).collect();
    let mut injected = Vec::new();
    for (key, value) in entries {
        if key == "config" || present.contains(key.as_str()) {
            continue;
        }
        match value.as_str() {
            "true" => injected.push(format!("--{key}")),
            "false" => {}
            _ => injected.push(format!("--{key}={value}")),
        }
    }
    // the subcommand is the first positional after the binary name
    let mut at = 1;
    while at < strings.len() {
        if strings[at] == "--config" {
            at += 2;
        } else if strings[at].starts_with('-') {
            at += 1;
        } else {
            break;
        }
    }
    let mut merged = argv;
    let insert_at = (at + 1).min(merged.len());
    merged.splice(insert_at..insert_at, injected.into_iter().map(OsString::from));
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let parsed = parse_config("# header\nC = 10\n--loss=early  # trailing\n\n").unwrap();
        assert_eq!(parsed, vec![("C".into(), "10".into()), ("loss".into(), "early".into())]);
        assert!(parse_config("just words").is_err());
        assert!(parse_config("=3").is_err());
    }

    #[test]
    fn gamma_values() {
        assert_eq!(parse_gamma("auto").unwrap(), Gamma::Auto);
        assert_eq!(parse_gamma("2.5").unwrap(), Gamma::Fixed(2.5));
        assert!(parse_gamma("-1").is_err());
        assert!(parse_gamma("zero").is_err());
    }

    #[test]
    fn base_size_reconciles_flags() {
        let table = LossSpec::Table { values: vec![0.0; 8] };
        assert_eq!(base_size(&table, None, 4).unwrap(), 3);
        assert!(base_size(&table, Some(2), 4).is_err());
        assert_eq!(base_size(&LossSpec::Hamming, None, 4).unwrap(), 4);
        assert!(base_size(&LossSpec::Table { values: vec![0.0; 3] }, None, 4).is_err());
    }

    #[test]
    fn loss_flags_need_their_parameters() {
        let args = LossArgs { loss: Some(LossName::Capped), values: None, beta: Some(vec![1.0]), lmax: None, alpha: None };
        assert!(args.spec(LossName::Hamming).is_err());
        let none = LossArgs { loss: None, values: None, beta: None, lmax: None, alpha: None };
        assert_eq!(none.spec(LossName::Early).unwrap(), LossSpec::EarlyDetection);
    }
}
