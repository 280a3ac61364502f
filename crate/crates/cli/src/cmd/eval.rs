use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::run::Run;
use crate::table::{read_rows, ScoreRow};
use clap::{Args, ValueEnum};
use ihc_core::metrics::{agreement_matrix, consensus_label, eval_categories, roc_auc, Consensus, EvalReport, MetricsError};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    #[value(name = "category")]
    Category,
    #[value(name = "IS", alias = "is")]
    #[serde(rename = "IS")]
    Is,
    #[value(name = "PS", alias = "ps")]
    #[serde(rename = "PS")]
    Ps,
    #[value(name = "TS", alias = "ts")]
    #[serde(rename = "TS")]
    Ts,
    #[value(name = "her2")]
    Her2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ScoreField {
    #[value(name = "IS", alias = "is")]
    #[serde(rename = "IS")]
    Is,
    #[value(name = "PS", alias = "ps")]
    #[serde(rename = "PS")]
    Ps,
    #[value(name = "TS", alias = "ts")]
    #[serde(rename = "TS")]
    Ts,
    #[value(name = "PRS", alias = "prs")]
    #[serde(rename = "PRS")]
    Prs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth score table; several raters may share it via rater_id.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted score table, one row per slide.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "category")]
    pub field: Field,
    /// Numeric prediction column ranked against a positive ground-truth category.
    #[arg(long, value_enum)]
    pub auc_field: Option<ScoreField>,
    #[arg(long)]
    pub out: PathBuf,
}

const CATEGORY_ORDER: [&str; 3] = ["negative", "equivocal", "positive"];
const HER2_ORDER: [&str; 4] = ["0", "1+", "2+", "3+"];

fn label(row: &ScoreRow, field: Field) -> Option<String> {
    let num = |v: Option<u8>| v.map(|v| v.to_string());
    match field {
        Field::Category => row.category.clone(),
        Field::Is => num(row.is),
        Field::Ps => num(row.ps),
        Field::Ts => num(row.ts),
        Field::Her2 => row.her2.clone(),
    }
    .filter(|s| !s.trim().is_empty())
}

fn numeric(row: &ScoreRow, f: ScoreField) -> Option<f64> {
    match f {
        ScoreField::Is => row.is.map(f64::from),
        ScoreField::Ps => row.ps.map(f64::from),
        ScoreField::Ts => row.ts.map(f64::from),
        ScoreField::Prs => row.prs,
    }
}

/// Labels that occur in either list, in the field's natural order.
fn present_labels(field: Field, lists: &[&[String]]) -> Vec<String> {
    let seen = |l: &str| lists.iter().any(|v| v.iter().any(|x| x == l));
    match field {
        Field::Category => CATEGORY_ORDER.iter().filter(|l| seen(l)).map(|l| l.to_string()).collect(),
        Field::Her2 => HER2_ORDER.iter().filter(|l| seen(l)).map(|l| l.to_string()).collect(),
        _ => (0..=8u8).map(|v| v.to_string()).filter(|l| seen(l)).collect(),
    }
}

fn metrics_err(e: MetricsError) -> CliError {
    let kind = match &e {
        MetricsError::LengthMismatch { .. } => "LengthMismatch",
        MetricsError::EmptyInput => "EmptyInput",
        MetricsError::UnknownLabel(_) => "UnknownLabel",
        _ => "MetricsError",
    };
    CliError::Input(format!("{kind}: {e}"))
}

#[derive(Serialize)]
struct EvalOutput {
    field: Field,
    raters: Vec<String>,
    n_slides: usize,
    /// Slides without a strict-majority ground truth, left out of the report.
    unresolved: Vec<String>,
    report: EvalReport,
}

pub fn run(args: &EvalArgs, cfg: &CliConfig) -> CliResult<()> {
    let gt = read_rows(&args.gt)?;
    let pred = read_rows(&args.pred)?;

    let mut by_rater: BTreeMap<String, BTreeMap<String, &ScoreRow>> = BTreeMap::new();
    for r in &gt {
        let rater = r.rater_id.clone().unwrap_or_else(|| "gt".into());
        if by_rater.entry(rater.clone()).or_default().insert(r.slide_id.clone(), r).is_some() {
            return Err(CliError::Input(format!("{}: rater {rater} scores {} twice", args.gt.display(), r.slide_id)));
        }
    }
    for (rater, rows) in &by_rater {
        if rows.len() != pred.len() {
            let e = metrics_err(MetricsError::LengthMismatch {
                left: rows.len(),
                right: pred.len(),
            });
            return Err(CliError::Input(format!("{e} (rater {rater} against {})", args.pred.display())));
        }
    }
    if pred.is_empty() {
        return Err(metrics_err(MetricsError::EmptyInput));
    }

    let need = |r: &ScoreRow, who: &str| {
        label(r, args.field).ok_or_else(|| CliError::Input(format!("{who}: slide {} has no {:?} value", r.slide_id, args.field)))
    };
    let mut algo = Vec::with_capacity(pred.len());
    let mut raters: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in &pred {
        algo.push(need(p, "prediction")?);
        for (rater, rows) in &by_rater {
            let g = rows
                .get(&p.slide_id)
                .ok_or_else(|| CliError::Input(format!("rater {rater} has no row for slide {}", p.slide_id)))?;
            raters.entry(rater.clone()).or_default().push(need(g, rater)?);
        }
    }

    let mut gt_labels = Vec::new();
    let mut pred_labels = Vec::new();
    let mut auc_scores = Vec::new();
    let mut auc_truth = Vec::new();
    let mut unresolved = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        let votes: Vec<String> = raters.values().map(|v| v[i].clone()).collect();
        let truth = match consensus_label(&votes).map_err(metrics_err)? {
            Consensus::Label(l) => l,
            Consensus::Unresolved => {
                unresolved.push(p.slide_id.clone());
                continue;
            }
        };
        if let Some(f) = args.auc_field {
            let score = numeric(p, f)
                .ok_or_else(|| CliError::Input(format!("prediction: slide {} has no {f:?} value", p.slide_id)))?;
            let cats: Vec<Option<String>> = by_rater.values().map(|rows| rows[&p.slide_id].category.clone()).collect();
            let cats: Vec<String> = cats.into_iter().flatten().collect();
            let positive = matches!(consensus_label(&cats), Ok(Consensus::Label(c)) if c == "positive");
            auc_scores.push(score);
            auc_truth.push(positive);
        }
        gt_labels.push(truth);
        pred_labels.push(algo[i].clone());
    }

    let mut all: Vec<&[String]> = raters.values().map(Vec::as_slice).collect();
    all.push(&algo);
    let labels = present_labels(args.field, &all);
    let mut report = eval_categories(&labels, &gt_labels, &pred_labels).map_err(metrics_err)?;
    if args.auc_field.is_some() {
        report.auc = match roc_auc(&auc_scores, &auc_truth) {
            Ok(a) => Some(a),
            Err(MetricsError::SingleClass) => None,
            Err(e) => return Err(metrics_err(e)),
        };
    }
    let agreement = agreement_matrix(&raters, &algo, &labels).map_err(metrics_err)?;

    let mut run = Run::start(&args.out, "eval", cfg)?;
    run.input(&args.gt)?;
    run.input(&args.pred)?;
    let out = EvalOutput {
        field: args.field,
        raters: raters.keys().cloned().collect(),
        n_slides: pred.len(),
        unresolved,
        report,
    };
    run.write("eval.json", serde_json::to_string_pretty(&out).expect("eval serialises") + "\n")?;
    let mut text = out.report.confusion.render_grid();
    text.push('\n');
    text += &agreement.render();
    run.write("confusion.txt", text)?;
    run.write("agreement.json", serde_json::to_string_pretty(&agreement).expect("agreement serialises") + "\n")?;
    run.finish("ok")?;
    Ok(())
}
