use super::forest::{argmax_low, derive_seed, ForestConfig, RandomForestModel};
use super::{FeatureConfig, Her2Error, Her2FeatureVector, Her2Score};
use crate::metrics::{quadratic_kappa, ConfusionMatrix};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// `None` when kappa is undefined on this fold.
    pub kappa: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k_folds: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Mean and population deviation over folds with a defined kappa.
    pub mean_kappa: Option<f64>,
    pub std_kappa: Option<f64>,
    /// Kappa over all held-out predictions at once.
    pub pooled_kappa: Option<f64>,
    pub cv_accuracy: f64,
    /// Accuracy of the final model on its own training data.
    pub train_accuracy: Option<f64>,
}

const FOLD_STREAM: u64 = u64::MAX;

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// continuing the deal across classes so fold sizes differ by at most one.
fn assign_folds(y: &[usize], n_classes: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, FOLD_STREAM));
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

fn labels() -> Vec<String> {
    Her2Score::ALL.iter().map(|h| h.label().to_string()).collect()
}

fn confusion(gt: &[usize], pred: &[usize]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(labels());
    for (&g, &p) in gt.iter().zip(pred) {
        cm.counts[g][p] += 1;
    }
    cm
}

fn accuracy(gt: &[usize], pred: &[usize]) -> f64 {
    gt.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / gt.len().max(1) as f64
}

/// K-fold cross-validation of the forest on raw feature rows.
pub fn cross_validate(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig, k_folds: usize) -> Result<CvReport, Her2Error> {
    let n = x.len();
    let n_classes = Her2Score::ALL.len();
    let mut present = y.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Her2Error::DegenerateDataset);
    }
    if k_folds < 2 || k_folds > n {
        return Err(Her2Error::FoldTooSmall { k: k_folds, n });
    }
    let fold = assign_folds(y, n_classes, k_folds, cfg.seed);
    let mut folds = Vec::with_capacity(k_folds);
    let mut all_gt = Vec::with_capacity(n);
    let mut all_pred = Vec::with_capacity(n);
    for f in 0..k_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
        let ty: Vec<usize> = train.iter().map(|&i| y[i]).collect();
        let fold_cfg = ForestConfig {
            seed: derive_seed(cfg.seed, f as u64),
            ..cfg.clone()
        };
        let model = RandomForestModel::fit(&tx, &ty, n_classes, vec![], &fold_cfg)?;
        let gt: Vec<usize> = test.iter().map(|&i| y[i]).collect();
        let pred = test.iter().map(|&i| model.predict(&x[i])).collect::<Result<Vec<_>, _>>()?;
        folds.push(FoldResult {
            fold: f,
            n_train: train.len(),
            n_test: test.len(),
            kappa: quadratic_kappa(&confusion(&gt, &pred)).ok(),
            accuracy: accuracy(&gt, &pred),
        });
        all_gt.extend(gt);
        all_pred.extend(pred);
    }
    let ks: Vec<f64> = folds.iter().filter_map(|f| f.kappa).collect();
    let mean = (!ks.is_empty()).then(|| ks.iter().sum::<f64>() / ks.len() as f64);
    let std = mean.map(|m| (ks.iter().map(|k| (k - m).powi(2)).sum::<f64>() / ks.len() as f64).sqrt());
    Ok(CvReport {
        k_folds,
        seed: cfg.seed,
        folds,
        mean_kappa: mean,
        std_kappa: std,
        pooled_kappa: quadratic_kappa(&confusion(&all_gt, &all_pred)).ok(),
        cv_accuracy: accuracy(&all_gt, &all_pred),
        train_accuracy: None,
    })
}

/// Cross-validates, then refits on the whole dataset.
pub fn train_rf(
    dataset: &[(Her2FeatureVector, Her2Score)],
    cfg: &ForestConfig,
    k_folds: usize,
) -> Result<(RandomForestModel, CvReport), Her2Error> {
    if dataset.is_empty() {
        return Err(Her2Error::EmptyInput);
    }
    let x: Vec<Vec<f64>> = dataset.iter().map(|(f, _)| f.values()).collect();
    let y: Vec<usize> = dataset.iter().map(|(_, s)| s.index()).collect();
    let mut report = cross_validate(&x, &y, cfg, k_folds)?;
    let bins = dataset[0].0.membrane_color_hist.len();
    let model = RandomForestModel::fit(&x, &y, Her2Score::ALL.len(), Her2FeatureVector::value_names(bins), cfg)?;
    let pred = x.iter().map(|r| model.predict(r)).collect::<Result<Vec<_>, _>>()?;
    report.train_accuracy = Some(accuracy(&y, &pred));
    Ok((model, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SlideAggregation {
    /// Predict once on the union of all regions.
    #[default]
    Pooled,
    /// Majority of the per-region predictions, ties toward the lower score.
    Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Her2Prediction {
    pub regions: Vec<Her2Score>,
    pub slide_score: Her2Score,
    pub aggregation: SlideAggregation,
}

fn to_score(i: usize) -> Her2Score {
    Her2Score::from_index(i).expect("model has four classes")
}

pub fn predict_her2(
    model: &RandomForestModel,
    regions: &[Her2FeatureVector],
    feature_cfg: &FeatureConfig,
    aggregation: SlideAggregation,
) -> Result<Her2Prediction, Her2Error> {
    if regions.is_empty() {
        return Err(Her2Error::EmptyInput);
    }
    let per: Vec<Her2Score> = regions
        .iter()
        .map(|r| model.predict(&r.values()).map(to_score))
        .collect::<Result<_, _>>()?;
    let slide_score = match aggregation {
        SlideAggregation::Pooled => {
            let pooled = Her2FeatureVector::pooled(regions, feature_cfg).ok_or(Her2Error::EmptyInput)?;
            to_score(model.predict(&pooled.values())?)
        }
        SlideAggregation::Vote => {
            let mut v = vec![0u32; Her2Score::ALL.len()];
            for s in &per {
                v[s.index()] += 1;
            }
            to_score(argmax_low(&v))
        }
    };
    Ok(Her2Prediction {
        regions: per,
        slide_score,
        aggregation,
    })
}
