//! Batch score table shared by `score`, `her2-predict`, `synth` and `eval`.
//! Inapplicable fields are left blank.

use crate::error::{CliError, CliResult};
use ihc_core::her2::Her2Score;
use ihc_core::score::{Category, MarkerScore, SlideScore};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub slide_id: String,
    pub marker: String,
    #[serde(rename = "IS")]
    pub is: Option<u8>,
    #[serde(rename = "PS")]
    pub ps: Option<u8>,
    #[serde(rename = "TS")]
    pub ts: Option<u8>,
    #[serde(rename = "PRS")]
    pub prs: Option<f64>,
    pub her2: Option<String>,
    pub category: Option<String>,
    pub rater_id: Option<String>,
}

pub fn category_name(c: Category) -> &'static str {
    match c {
        Category::Negative => "negative",
        Category::Equivocal => "equivocal",
        Category::Positive => "positive",
    }
}

impl ScoreRow {
    pub fn blank(slide_id: &str, marker: &str, rater: &str) -> Self {
        Self {
            slide_id: slide_id.to_string(),
            marker: marker.to_string(),
            is: None,
            ps: None,
            ts: None,
            prs: None,
            her2: None,
            category: None,
            rater_id: Some(rater.to_string()),
        }
    }

    pub fn from_marker_score(slide_id: &str, marker: &str, score: &MarkerScore, rater: &str) -> Self {
        let mut row = Self::blank(slide_id, marker, rater);
        match score {
            MarkerScore::Allred(a) => {
                row.is = Some(a.is);
                row.ps = Some(a.ps);
                row.ts = Some(a.ts);
            }
            MarkerScore::Proliferation(p) => row.prs = Some(p.prs),
        }
        row.category = Some(category_name(score.category()).to_string());
        row
    }

    pub fn from_slide_score(slide_id: &str, s: &SlideScore, rater: &str) -> Self {
        Self::from_marker_score(slide_id, s.marker.name(), &s.scores, rater)
    }

    pub fn from_her2(slide_id: &str, score: Her2Score, rater: &str) -> Self {
        let mut row = Self::blank(slide_id, "her2", rater);
        row.her2 = Some(score.label().to_string());
        row.category = Some(category_name(score.clinical()).to_string());
        row
    }
}

pub fn write_rows(rows: &[ScoreRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(CliError::input)?;
    }
    w.into_inner().map_err(CliError::input)
}

pub fn read_rows(path: &Path) -> CliResult<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::Input(format!("{}: row {}: {e}", path.display(), i + 1))))
        .collect()
}

/// Reads any headed CSV into string records, with the header row.
pub fn read_records(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        rows.push(rec.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

/// Column lookup by header name.
pub struct Columns<'a> {
    header: &'a [String],
    path: &'a Path,
}

impl<'a> Columns<'a> {
    pub fn new(header: &'a [String], path: &'a Path) -> Self {
        Self { header, path }
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h.trim() == name)
    }

    pub fn require(&self, name: &str) -> CliResult<usize> {
        self.find(name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column {name:?}", self.path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ihc_core::score::{AllredScore, ProliferationScore};

    #[test]
    fn blanks_for_inapplicable_fields() {
        let a = MarkerScore::Allred(AllredScore {
            is: 2,
            ps: 4,
            ts: 6,
            category: Category::Positive,
        });
        let p = MarkerScore::Proliferation(ProliferationScore {
            prs: 15.0,
            category: Category::Positive,
        });
        let rows = vec![
            ScoreRow::from_marker_score("s1", "er", &a, "algorithm"),
            ScoreRow::from_marker_score("s2", "ki67", &p, "algorithm"),
            ScoreRow::from_her2("s3", Her2Score::TwoPlus, "algorithm"),
        ];
        let text = String::from_utf8(write_rows(&rows).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slide_id,marker,IS,PS,TS,PRS,her2,category,rater_id");
        assert_eq!(lines[1], "s1,er,2,4,6,,,positive,algorithm");
        assert_eq!(lines[2], "s2,ki67,,,,15.0,,positive,algorithm");
        assert_eq!(lines[3], "s3,her2,,,,,2+,equivocal,algorithm");
    }
}
