pub mod calibrate;
pub mod detect;
pub mod eval;
pub mod her2;
pub mod score;
pub mod synth;
pub mod verify;

use crate::config::CliConfig;
use crate::error::CliResult;
use clap::Subcommand;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score ER, PR or Ki67 slides, singly or from a batch index.
    Score(score::ScoreArgs),
    /// Detect and grade nuclei without scoring.
    Detect(detect::DetectArgs),
    /// Fit stain thresholds from labelled nuclei.
    Calibrate(calibrate::CalibrateArgs),
    /// Extract HER2 membrane features from annotated regions.
    Her2Features(her2::FeaturesArgs),
    /// Cross-validate and train the HER2 forest.
    Her2Train(her2::TrainArgs),
    /// Predict HER2 scores per region and per slide.
    Her2Predict(her2::PredictArgs),
    /// Compare predicted scores with one or more raters.
    Eval(eval::EvalArgs),
    /// Generate synthetic slides or HER2 regions with known truth.
    Synth(synth::SynthArgs),
    /// Check a synthetic manifest, and optionally a score, for consistency.
    Verify(verify::VerifyArgs),
}

impl Command {
    pub fn run(&self, cfg: &CliConfig) -> CliResult<()> {
        match self {
            Command::Score(a) => score::run(a, cfg),
            Command::Detect(a) => detect::run(a, cfg),
            Command::Calibrate(a) => calibrate::run(a, cfg),
            Command::Her2Features(a) => her2::features(a, cfg),
            Command::Her2Train(a) => her2::train(a, cfg),
            Command::Her2Predict(a) => her2::predict(a, cfg),
            Command::Eval(a) => eval::run(a, cfg),
            Command::Synth(a) => synth::run(a, cfg),
            Command::Verify(a) => verify::run(a, cfg),
        }
    }
}
