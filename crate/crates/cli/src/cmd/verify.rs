use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use clap::Args;
use ihc_core::score::SlideScore;
use ihc_core::synth::{verify_manifest, GroundTruthManifest};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Slide score JSON to check against the manifest expectations.
    #[arg(long)]
    pub score: Option<PathBuf>,
    /// Writes verify.json and a run manifest here; otherwise prints only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    manifest: String,
    score: Option<String>,
    consistent: bool,
    issues: Vec<String>,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn check_score(m: &GroundTruthManifest, s: &SlideScore) -> Vec<String> {
    let mut issues = Vec::new();
    if s.marker != m.marker {
        issues.push(format!("score marker {} differs from manifest marker {}", s.marker, m.marker));
    }
    if s.counts != m.expected_counts {
        issues.push(format!("counts: score has {:?}, manifest expects {:?}", s.counts, m.expected_counts));
    }
    match &m.expected_score {
        Some(want) if *want != s.scores => issues.push(format!("score: got {:?}, manifest expects {want:?}", s.scores)),
        None => issues.push("manifest expects no score (empty slide)".into()),
        _ => {}
    }
    issues
}

pub fn run(args: &VerifyArgs, cfg: &CliConfig) -> CliResult<()> {
    let m = GroundTruthManifest::from_json(&read(&args.manifest)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.manifest.display())))?;
    let mut issues = verify_manifest(&m);
    if let Some(p) = &args.score {
        let s: SlideScore = serde_json::from_str(&read(p)?).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
        issues.extend(check_score(&m, &s));
    }
    for i in &issues {
        println!("{i}");
    }
    if issues.is_empty() {
        println!("ok");
    }
    let report = Report {
        manifest: args.manifest.display().to_string(),
        score: args.score.as_ref().map(|p| p.display().to_string()),
        consistent: issues.is_empty(),
        issues,
    };
    if let Some(out) = &args.out {
        let mut run = Run::start(out, "verify", cfg)?;
        run.input(&args.manifest)?;
        if let Some(p) = &args.score {
            run.input(p)?;
        }
        run.write("verify.json", serde_json::to_string_pretty(&report).expect("report serialises") + "\n")?;
        run.finish(if report.consistent { "ok" } else { "inconsistent" })?;
    }
    if report.consistent {
        Ok(())
    } else {
        Err(CliError::Qc(format!("{} inconsistencies", report.issues.len())))
    }
}
