use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use crate::table::{read_records, write_rows, Columns, ScoreRow};
use clap::Args;
use ihc_core::her2::{
    extract_features, predict_her2, train_rf, Her2FeatureVector, Her2Score, MembraneRegion, RandomForestModel,
    RegionFiles,
};
use ihc_core::metrics::ALGORITHM;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// CSV index: region_id, image, membrane, nuclei, optional slide_id and score.
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature table written by her2-features; every row needs a score.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

const ID_COLUMNS: [&str; 3] = ["region_id", "slide_id", "score"];

struct FeatureRow {
    region_id: String,
    slide_id: String,
    score: Option<Her2Score>,
    features: Her2FeatureVector,
}

fn parse_score(s: &str, region: &str) -> CliResult<Option<Her2Score>> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    Her2Score::parse(s)
        .map(Some)
        .ok_or_else(|| CliError::Input(format!("{region}: unknown HER2 score {s:?}")))
}

pub fn features(args: &FeaturesArgs, cfg: &CliConfig) -> CliResult<()> {
    let base = args.regions.parent().unwrap_or(Path::new("."));
    let (header, rows) = read_records(&args.regions)?;
    let cols = Columns::new(&header, &args.regions);
    let [rid, img, mem, nuc] = ["region_id", "image", "membrane", "nuclei"].map(|c| cols.require(c));
    let (rid, img, mem, nuc) = (rid?, img?, mem?, nuc?);
    let (sid, score) = (cols.find("slide_id"), cols.find("score"));

    let mut run = Run::start(&args.out, "her2-features", cfg)?;
    run.input(&args.regions)?;
    let fc = &cfg.her2.features;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = ID_COLUMNS.map(String::from).to_vec();
    head.extend(Her2FeatureVector::column_names(fc.bins));
    w.write_record(&head).map_err(CliError::input)?;
    for row in &rows {
        let files = RegionFiles {
            image: base.join(row[img].trim()),
            membrane: base.join(row[mem].trim()),
            nuclei: base.join(row[nuc].trim()),
        };
        for p in [&files.image, &files.membrane, &files.nuclei] {
            run.input(p)?;
        }
        let id = row[rid].trim();
        let region = MembraneRegion::read_files(id, &files).map_err(CliError::input)?;
        let f = extract_features(&region, fc).map_err(CliError::input)?;
        let slide = sid.map(|c| row[c].trim().to_string()).filter(|s| !s.is_empty()).unwrap_or_else(|| id.to_string());
        let label = score.map(|c| row[c].trim().to_string()).unwrap_or_default();
        parse_score(&label, id)?;
        let mut rec = vec![id.to_string(), slide, label];
        rec.extend(f.to_columns());
        w.write_record(&rec).map_err(CliError::input)?;
    }
    run.write("features.csv", w.into_inner().map_err(CliError::input)?)?;
    run.finish("ok")?;
    Ok(())
}

fn read_features(path: &Path, cfg: &CliConfig) -> CliResult<Vec<FeatureRow>> {
    let (header, rows) = read_records(path)?;
    let want = Her2FeatureVector::column_names(cfg.her2.features.bins);
    if header.len() != ID_COLUMNS.len() + want.len() || header[..3] != ID_COLUMNS.map(String::from) || header[3..] != want[..] {
        return Err(CliError::Input(format!(
            "{}: header does not match a {}-bin feature table",
            path.display(),
            cfg.her2.features.bins
        )));
    }
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let cols: Vec<&str> = r[3..].iter().map(String::as_str).collect();
            let features = Her2FeatureVector::from_columns(&cols, &cfg.her2.features)
                .map_err(|e| CliError::Input(format!("{}: row {}: {e}", path.display(), i + 1)))?;
            Ok(FeatureRow {
                region_id: r[0].clone(),
                slide_id: r[1].clone(),
                score: parse_score(&r[2], &r[0])?,
                features,
            })
        })
        .collect()
}

pub fn train(args: &TrainArgs, cfg: &CliConfig) -> CliResult<()> {
    let rows = read_features(&args.features, cfg)?;
    let dataset: Vec<(Her2FeatureVector, Her2Score)> = rows
        .into_iter()
        .map(|r| {
            let s = r.score.ok_or_else(|| CliError::Input(format!("{}: missing score", r.region_id)))?;
            Ok((r.features, s))
        })
        .collect::<CliResult<_>>()?;
    let mut run = Run::start(&args.out, "her2-train", cfg)?;
    run.input(&args.features)?;
    let (model, report) = train_rf(&dataset, &cfg.her2.forest, cfg.her2.cv_folds).map_err(CliError::input)?;
    log::info!("cv kappa {:?}", report.mean_kappa);
    run.write("model.json", model.to_json())?;
    run.write("cv_report.json", serde_json::to_string_pretty(&report).expect("report serialises") + "\n")?;
    run.finish("ok")?;
    Ok(())
}

pub fn predict(args: &PredictArgs, cfg: &CliConfig) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.model).map_err(|e| CliError::io(&args.model, e))?;
    let model = RandomForestModel::from_json(&text).map_err(CliError::input)?;
    let rows = read_features(&args.features, cfg)?;
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no regions", args.features.display())));
    }
    let mut run = Run::start(&args.out, "her2-predict", cfg)?;
    run.input(&args.model)?;
    run.input(&args.features)?;

    let mut slides: BTreeMap<&str, Vec<&FeatureRow>> = BTreeMap::new();
    for r in &rows {
        slides.entry(r.slide_id.as_str()).or_default().push(r);
    }
    let mut region_out = csv::Writer::from_writer(Vec::new());
    region_out.write_record(["region_id", "slide_id", "her2"]).map_err(CliError::input)?;
    let mut slide_rows = Vec::new();
    for (slide, members) in &slides {
        let vectors: Vec<Her2FeatureVector> = members.iter().map(|r| r.features.clone()).collect();
        let pred = predict_her2(&model, &vectors, &cfg.her2.features, cfg.her2.aggregation).map_err(CliError::input)?;
        for (r, s) in members.iter().zip(&pred.regions) {
            region_out
                .write_record([r.region_id.as_str(), slide, s.label()])
                .map_err(CliError::input)?;
        }
        slide_rows.push(ScoreRow::from_her2(slide, pred.slide_score, ALGORITHM));
    }
    run.write("regions.csv", region_out.into_inner().map_err(CliError::input)?)?;
    run.write("scores.csv", write_rows(&slide_rows)?)?;
    run.finish("ok")?;
    Ok(())
}
