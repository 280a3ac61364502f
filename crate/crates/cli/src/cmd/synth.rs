use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use crate::table::{write_rows, ScoreRow};
use clap::{Args, ValueEnum};
use ihc_core::synth::{generate_her2_dataset, generate_slide, SlideSpec};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Er,
    Ki67,
    ErArtifact,
    Her2,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "er")]
    pub preset: Preset,
    /// Slides to generate (regions for the her2 preset). Slide i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Slide spec JSON replacing the preset; its seed is overridden per slide.
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// her2 preset: consecutive regions grouped under one slide_id.
    #[arg(long, default_value_t = 1)]
    pub regions_per_slide: usize,
    #[arg(long)]
    pub out: PathBuf,
}

const RATER: &str = "synth";

fn rel(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn slides(args: &SynthArgs, cfg: &CliConfig, run: &mut Run) -> CliResult<()> {
    let base = match &args.spec {
        Some(path) => {
            run.input(path)?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<SlideSpec>(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        }
        None => match args.preset {
            Preset::Er => SlideSpec::er_preset(0),
            Preset::Ki67 => SlideSpec::ki67_preset(0),
            Preset::ErArtifact => SlideSpec::er_artifact_preset(0),
            Preset::Her2 => unreachable!("handled by regions"),
        },
    };
    let ids: Vec<String> = (0..args.count).map(|i| format!("synth_{i:03}")).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(CliError::input)?;
    let dir = run.dir().to_path_buf();
    let written = pool.install(|| {
        ids.par_iter()
            .enumerate()
            .map(|(i, id)| {
                let spec = SlideSpec {
                    seed: cfg.seed.wrapping_add(i as u64),
                    ..base.clone()
                };
                let slide = generate_slide(&spec).map_err(CliError::input)?;
                slide.write(dir.join(id)).map_err(CliError::input)
            })
            .collect::<Vec<CliResult<_>>>()
    });

    let mut index = csv::Writer::from_writer(Vec::new());
    index.write_record(["slide_id", "slide", "roi", "marker"]).map_err(CliError::input)?;
    let mut truth = Vec::new();
    for (id, m) in ids.iter().zip(written) {
        let m = m?;
        for name in m.files.values().chain(std::iter::once(&"manifest.json".to_string())) {
            run.record(&rel(&Path::new(id).join(name)))?;
        }
        let slide = rel(&Path::new(id).join(&m.files["slide"]));
        let roi = rel(&Path::new(id).join(&m.files["roi"]));
        index
            .write_record([id.as_str(), &slide, &roi, m.marker.name()])
            .map_err(CliError::input)?;
        truth.push(match &m.expected_score {
            Some(s) => ScoreRow::from_marker_score(id, m.marker.name(), s, RATER),
            None => ScoreRow::blank(id, m.marker.name(), RATER),
        });
    }
    run.write("index.csv", index.into_inner().map_err(CliError::input)?)?;
    run.write("truth.csv", write_rows(&truth)?)?;
    Ok(())
}

fn regions(args: &SynthArgs, cfg: &CliConfig, run: &mut Run) -> CliResult<()> {
    if args.regions_per_slide == 0 {
        return Err(CliError::Input("--regions-per-slide must be at least 1".into()));
    }
    let data = generate_her2_dataset(args.count, cfg.seed).map_err(CliError::input)?;
    let dir = run.dir().join("regions");
    let mut index = csv::Writer::from_writer(Vec::new());
    index
        .write_record(["region_id", "slide_id", "image", "membrane", "nuclei", "score"])
        .map_err(CliError::input)?;
    let mut truth = Vec::new();
    for (i, (region, score)) in data.iter().enumerate() {
        let id = format!("region_{i:04}");
        let slide = format!("case_{:03}", i / args.regions_per_slide);
        let files = region.write_files(&dir, &id).map_err(CliError::input)?;
        let names = [&files.image, &files.membrane, &files.nuclei].map(|p| rel(&Path::new("regions").join(p)));
        for n in &names {
            run.record(n)?;
        }
        index
            .write_record([id.as_str(), &slide, &names[0], &names[1], &names[2], score.label()])
            .map_err(CliError::input)?;
        if i % args.regions_per_slide == 0 {
            truth.push(ScoreRow::from_her2(&slide, *score, RATER));
        }
    }
    run.write("regions.csv", index.into_inner().map_err(CliError::input)?)?;
    if args.regions_per_slide == 1 {
        run.write("truth.csv", write_rows(&truth)?)?;
    }
    Ok(())
}

pub fn run(args: &SynthArgs, cfg: &CliConfig) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Input("--count must be at least 1".into()));
    }
    let mut run = Run::start(&args.out, "synth", cfg)?;
    if args.spec.is_none() && args.preset == Preset::Her2 {
        regions(args, cfg, &mut run)?;
    } else {
        slides(args, cfg, &mut run)?;
    }
    run.finish("ok")?;
    Ok(())
}
