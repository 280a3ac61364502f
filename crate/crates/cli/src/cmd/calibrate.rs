use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use crate::table::{read_records, Columns};
use clap::Args;
use ihc_core::stain::{calibrate_thresholds, rgb_to_cmyk, CmykPixel, StainClass, StainThresholds};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV of labelled nuclei: `class` plus either `r,g,b` (0–255) or `c,m,y,k` (0–1).
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Pipeline {
    stain: StainThresholds,
}

#[derive(Serialize)]
struct Snippet {
    pipeline: Pipeline,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str, line: usize) -> CliResult<T> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Input(format!("row {line}: bad {what} value {s:?}")))
}

pub fn run(args: &CalibrateArgs, cfg: &CliConfig) -> CliResult<()> {
    let (header, rows) = read_records(&args.samples)?;
    let cols = Columns::new(&header, &args.samples);
    let class = cols.require("class")?;
    let rgb = ["r", "g", "b"].map(|c| cols.find(c));
    let cmyk = ["c", "m", "y", "k"].map(|c| cols.find(c));
    let mut samples = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        let label = StainClass::parse(&row[class])
            .ok_or_else(|| CliError::Input(format!("row {line}: unknown class {:?}", row[class])))?;
        let px = if let [Some(r), Some(g), Some(b)] = rgb {
            rgb_to_cmyk([parse(&row[r], "r", line)?, parse(&row[g], "g", line)?, parse(&row[b], "b", line)?])
        } else if let [Some(c), Some(m), Some(y), Some(k)] = cmyk {
            CmykPixel {
                c: parse(&row[c], "c", line)?,
                m: parse(&row[m], "m", line)?,
                y: parse(&row[y], "y", line)?,
                k: parse(&row[k], "k", line)?,
            }
        } else {
            return Err(CliError::Input("samples need r,g,b or c,m,y,k columns".into()));
        };
        samples.push((px, label));
    }
    let cal = calibrate_thresholds(&samples).map_err(CliError::input)?;
    let mut run = Run::start(&args.out, "calibrate", cfg)?;
    run.input(&args.samples)?;
    run.write("calibration.json", serde_json::to_string_pretty(&cal).expect("calibration serialises") + "\n")?;
    let snippet = toml::to_string(&Snippet {
        pipeline: Pipeline { stain: cal.thresholds },
    })
    .map_err(CliError::input)?;
    run.write("stain.toml", snippet)?;
    run.finish("ok")?;
    Ok(())
}
