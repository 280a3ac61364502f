use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use clap::Args;
use ihc_core::nuclei::{write_label_png, Frame, InstanceFile};
use ihc_core::pipeline::detect_slide;
use ihc_core::slideio::open_slide;
use ihc_core::Marker;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub slide: PathBuf,
    /// Grading rule to attach to each nucleus (er, pr, ki67).
    #[arg(long)]
    pub marker: String,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &DetectArgs, cfg: &CliConfig) -> CliResult<()> {
    let marker = Marker::parse(&args.marker).ok_or_else(|| CliError::Input(format!("unknown marker {:?}", args.marker)))?;
    let slide = open_slide(&args.slide).map_err(CliError::input)?;
    let mut run = Run::start(&args.out, "detect", cfg)?;
    run.input(&args.slide)?;
    let instances = detect_slide(&slide, marker, &cfg.pipeline, cfg.workers)?;
    let (w, h) = slide.dimensions();
    let file = InstanceFile::new(&instances, Frame::Global, 0, w, h);
    run.write("instances.json", serde_json::to_string(&file).expect("instances serialise") + "\n")?;
    let labels = run.dir().join("labels.png");
    write_label_png(&labels, &instances, w, h).map_err(CliError::input)?;
    run.record("labels.png")?;
    log::info!("{} nuclei", instances.len());
    run.finish("ok")?;
    Ok(())
}
