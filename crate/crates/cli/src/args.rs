use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "pathattr", version, about = "Path attribution for small classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute attribution maps for one image or a directory of images.
    Attribute(AttributeArgs),
    /// Compute a single baseline and report its diagnostics.
    Baseline(BaselineArgs),
    /// Run axiom checks and the built-in demonstrations.
    Axioms(AxiomsArgs),
    /// Insertion/deletion evaluation of attribution maps.
    EvalInsdel(EvalInsdelArgs),
    /// Sensitivity-N evaluation of attribution maps.
    EvalSensn(EvalSensnArgs),
    /// Exact path attribution on a piecewise-linear model.
    Oracle(OracleArgs),
    /// Train a small model on a synthetic dataset.
    TrainToy(TrainToyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Method {
    Ig,
    IgGauss,
    IgAvg,
    Eg,
    Proposed,
    ProposedIgbase,
    ProposedSingle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ig => "ig",
            Method::IgGauss => "ig_gauss",
            Method::IgAvg => "ig_avg",
            Method::Eg => "eg",
            Method::Proposed => "proposed",
            Method::ProposedIgbase => "proposed_igbase",
            Method::ProposedSingle => "proposed_single",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum BaselineKind {
    Black,
    GaussianNoise,
    InputMean,
    Blur,
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Target {
    Logit,
    Probability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SearchGrad {
    Loss,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ReferenceKind {
    Black,
    Blur,
    InputMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CurveScoreArg {
    Probability,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dataset {
    Blobs,
    Bars16,
}

/// Flags shared by every command that computes attribution maps.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value = "ig")]
    pub method: Method,
    /// Model file (TOML model document).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Image (.pgm/.ppm), tensor text file, or a directory of them.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Total gradient evaluations per map (m for ig, K for eg/proposed).
    #[arg(long, default_value_t = 150)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub num_baselines: usize,
    /// Baseline recipe; defaults follow the method.
    #[arg(long, value_enum)]
    pub baseline_kind: Option<BaselineKind>,
    /// Blur width, or the step of the schedule `σ_b = σ·b` for multi-baseline methods.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Standard deviation of Gaussian-noise baselines.
    #[arg(long, default_value_t = 0.25)]
    pub noise_std: f64,
    /// Scalar output the gradients target.
    #[arg(long, value_enum, default_value = "logit")]
    pub target_output: Target,
    /// Gradient used by the baseline search.
    #[arg(long, value_enum, default_value = "loss")]
    pub baseline_grad: SearchGrad,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    /// Re-run the configuration recorded in a meta.json file.
    #[arg(long, conflicts_with_all = ["model", "input"])]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "optimized")]
    pub baseline_kind: BaselineKind,
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0.25)]
    pub noise_std: f64,
    #[arg(long, value_enum, default_value = "loss")]
    pub baseline_grad: SearchGrad,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AxiomsArgs {
    /// example1, example2 or weak-dependence; all when omitted.
    #[arg(long)]
    pub demo: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalInsdelArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    #[arg(long, value_enum, default_value = "black")]
    pub reference: ReferenceKind,
    #[arg(long, default_value_t = 1)]
    pub group_size: usize,
    #[arg(long, value_enum, default_value = "probability")]
    pub curve_score: CurveScoreArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSensnArgs {
    #[command(flatten)]
    pub method: MethodArgs,
    /// Comma-separated feature fractions in [0.01, 0.9].
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.3,0.5,0.7,0.9")]
    pub fractions: Vec<f64>,
    /// Random subsets per fraction.
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Built-in piecewise-linear model name.
    #[arg(long, conflicts_with = "model")]
    pub builtin: Option<String>,
    /// Piecewise-linear model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub input: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub baseline: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long, value_enum, default_value = "blobs")]
    pub dataset: Dataset,
    /// Training set size.
    #[arg(long, default_value_t = 400)]
    pub samples: usize,
    /// Held-out examples written next to the model.
    #[arg(long, default_value_t = 20)]
    pub test_samples: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_and_lists() {
        let cli = Cli::try_parse_from(["pathattr", "eval-sensn", "--fractions", "0.1,0.2"]).unwrap();
        let Command::EvalSensn(a) = cli.command else { panic!() };
        assert_eq!(a.fractions, vec![0.1, 0.2]);
        assert_eq!(a.method.steps, 150);
        assert_eq!(a.method.method, Method::Ig);
        let cli = Cli::try_parse_from(["pathattr", "oracle", "--builtin", "example1", "--input", "-1,2.5", "--baseline", "0,0"]).unwrap();
        let Command::Oracle(a) = cli.command else { panic!() };
        assert_eq!(a.input, vec![-1.0, 2.5]);
        assert!(Cli::try_parse_from(["pathattr", "attribute", "--replay", "m.json", "--model", "x", "--out", "o"]).is_err());
    }

    #[test]
    fn method_names_match_value_names() {
        for m in Method::value_variants() {
            assert_eq!(m.to_possible_value().unwrap().get_name(), m.name());
        }
    }
}
