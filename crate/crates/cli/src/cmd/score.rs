use crate::config::CliConfig;
use crate::error::{qc_code, CliError, CliResult};
use crate::run::Run;
use crate::table::{read_records, write_rows, Columns, ScoreRow};
use clap::Args;
use ihc_core::metrics::ALGORITHM;
use ihc_core::nuclei::{import_instances, Frame};
use ihc_core::pipeline::{run_pipeline, score_instances, score_json, tissue_roi};
use ihc_core::roi::import_roi;
use ihc_core::score::SlideScore;
use ihc_core::slideio::open_slide;
use ihc_core::Marker;
use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// er, pr or ki67. Required unless every batch row names its marker.
    #[arg(long)]
    pub marker: Option<String>,
    /// Slide image (pyramidal TIFF or PNG).
    #[arg(long, conflicts_with = "batch")]
    pub slide: Option<PathBuf>,
    /// Tumour ROI mask (PNG with sidecar, or RLE JSON). Tissue is used when absent.
    #[arg(long, conflicts_with = "batch")]
    pub roi: Option<PathBuf>,
    /// Pre-segmented nuclei (label PNG or instance JSON, level-0 frame).
    #[arg(long, conflicts_with = "batch")]
    pub instances: Option<PathBuf>,
    /// Slide id for single-slide runs; defaults to the slide file stem.
    #[arg(long, conflicts_with = "batch")]
    pub id: Option<String>,
    /// CSV index with columns slide_id, slide and optional roi, instances, marker.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
struct Job {
    id: String,
    slide: PathBuf,
    roi: Option<PathBuf>,
    instances: Option<PathBuf>,
    marker: Marker,
}

#[derive(Debug, Serialize)]
struct QcEntry {
    slide_id: String,
    code: &'static str,
    reason: String,
}

fn parse_marker(s: &str) -> CliResult<Marker> {
    match Marker::parse(s) {
        Some(Marker::Her2) => Err(CliError::Input("her2 is scored with her2-predict".into())),
        Some(m) => Ok(m),
        None => Err(CliError::Input(format!("unknown marker {s:?}"))),
    }
}

fn resolve(base: &Path, s: &str) -> Option<PathBuf> {
    let s = s.trim();
    (!s.is_empty()).then(|| base.join(s))
}

fn jobs(args: &ScoreArgs) -> CliResult<Vec<Job>> {
    let default_marker = args.marker.as_deref().map(parse_marker).transpose()?;
    let need_marker = || default_marker.ok_or_else(|| CliError::Input("--marker is required".into()));
    if let Some(index) = &args.batch {
        let base = index.parent().unwrap_or(Path::new("."));
        let (header, rows) = read_records(index)?;
        let cols = Columns::new(&header, index);
        let (id, slide) = (cols.require("slide_id")?, cols.require("slide")?);
        let (roi, inst, marker) = (cols.find("roi"), cols.find("instances"), cols.find("marker"));
        let get = |row: &Vec<String>, c: Option<usize>| c.and_then(|c| row.get(c).cloned()).unwrap_or_default();
        let mut out = Vec::new();
        for row in &rows {
            let m = get(row, marker);
            out.push(Job {
                id: row[id].trim().to_string(),
                slide: resolve(base, &row[slide]).ok_or_else(|| CliError::Input(format!("{}: empty slide path", row[id])))?,
                roi: resolve(base, &get(row, roi)),
                instances: resolve(base, &get(row, inst)),
                marker: if m.trim().is_empty() { need_marker()? } else { parse_marker(&m)? },
            });
        }
        if out.is_empty() {
            return Err(CliError::Input(format!("{}: no slides listed", index.display())));
        }
        Ok(out)
    } else {
        let slide = args.slide.clone().ok_or_else(|| CliError::Input("give --slide or --batch".into()))?;
        let id = args
            .id
            .clone()
            .or_else(|| slide.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "slide".into());
        Ok(vec![Job {
            id,
            slide,
            roi: args.roi.clone(),
            instances: args.instances.clone(),
            marker: need_marker()?,
        }])
    }
}

enum Outcome {
    Scored(SlideScore),
    Rejected(&'static str, String),
}

fn score_one(job: &Job, cfg: &CliConfig, workers: usize) -> CliResult<Outcome> {
    let slide = open_slide(&job.slide).map_err(CliError::input)?;
    let roi = job.roi.as_ref().map(import_roi).transpose().map_err(CliError::input)?;
    let result = match &job.instances {
        Some(path) => {
            let instances = import_instances(path, Frame::Global).map_err(CliError::input)?;
            let roi = match roi {
                Some(r) => r,
                None => tissue_roi(&slide, &cfg.pipeline)?,
            };
            score_instances(&slide, instances, &roi, job.marker, &cfg.pipeline)
        }
        None => run_pipeline(&slide, roi, job.marker, &cfg.pipeline, workers).map(|o| o.score),
    };
    match result {
        Ok(s) => Ok(Outcome::Scored(s)),
        Err(e) => match qc_code(&e) {
            Some(code) => Ok(Outcome::Rejected(code, e.to_string())),
            None => Err(e.into()),
        },
    }
}

pub fn run(args: &ScoreArgs, cfg: &CliConfig) -> CliResult<()> {
    let jobs = jobs(args)?;
    let mut run = Run::start(&args.out, "score", cfg)?;
    if let Some(b) = &args.batch {
        run.input(b)?;
    }
    for j in &jobs {
        run.input(&j.slide)?;
        for p in [&j.roi, &j.instances].into_iter().flatten() {
            run.input(p)?;
        }
    }
    // one slide: parallel over its patches; batch: parallel over slides
    let per_slide = if jobs.len() == 1 { cfg.workers } else { 1 };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(CliError::input)?;
    let results: Vec<CliResult<Outcome>> = pool.install(|| jobs.par_iter().map(|j| score_one(j, cfg, per_slide)).collect());

    let mut rows = Vec::new();
    let mut qc = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        match res? {
            Outcome::Scored(s) => {
                run.write(&format!("{}.score.json", job.id), score_json(&s))?;
                rows.push(ScoreRow::from_slide_score(&job.id, &s, ALGORITHM));
                log::info!("{}: {:?}", job.id, s.category);
            }
            Outcome::Rejected(code, reason) => {
                log::warn!("{}: {code}: {reason}", job.id);
                qc.push(QcEntry {
                    slide_id: job.id.clone(),
                    code,
                    reason,
                });
            }
        }
    }
    run.write("scores.csv", write_rows(&rows)?)?;
    if qc.is_empty() {
        run.finish("ok")?;
        Ok(())
    } else {
        run.write("qc.json", serde_json::to_string_pretty(&qc).expect("qc serialises") + "\n")?;
        run.finish("qc-rejected")?;
        let names: Vec<String> = qc.iter().map(|q| format!("{} ({})", q.slide_id, q.code)).collect();
        Err(CliError::Qc(names.join("; ")))
    }
}
