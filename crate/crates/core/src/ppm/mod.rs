//! Performance prediction models: regressors from a candidate's tag counts
//! to the downstream performance of a reward model trained on it.

pub mod gbt;
pub mod linear;
pub mod metrics;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateRecord, FeatureVector};
use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;
use crate::tagging::TagVocabulary;

pub use gbt::{GbtFit, GbtParams};
pub use linear::{expand_quadratic, fit_ridge, Expansion, LinearFit};
pub use metrics::{rmse, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Quadratic,
    Gbt,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Quadratic => "quadratic",
            ModelKind::Gbt => "gbt",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "quadratic" => Ok(ModelKind::Quadratic),
            "gbt" => Ok(ModelKind::Gbt),
            _ => Err(Error::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpmSettings {
    pub kind: ModelKind,
    /// Ridge strength; `None` picks 0 for linear and 1e-3 for quadratic models.
    pub ridge: Option<f64>,
    pub expansion: Expansion,
    pub gbt: GbtParams,
}

impl Default for PpmSettings {
    fn default() -> Self {
        PpmSettings {
            kind: ModelKind::Quadratic,
            ridge: None,
            expansion: Expansion::SquaresOnly,
            gbt: GbtParams::default(),
        }
    }
}

impl PpmSettings {
    pub fn of_kind(kind: ModelKind) -> Self {
        PpmSettings {
            kind,
            ..Default::default()
        }
    }

    pub fn effective_ridge(&self) -> f64 {
        self.ridge.unwrap_or(match self.kind {
            ModelKind::Linear | ModelKind::Gbt => 0.0,
            ModelKind::Quadratic => 1e-3,
        })
    }
}

/// Per-feature affine map applied before the model: `(x - shift) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelForm {
    Linear {
        intercept: f64,
        weights: Vec<f64>,
    },
    Quadratic {
        expansion: Expansion,
        intercept: f64,
        /// Weights over the expanded vector: linear terms first, then second-order terms.
        weights: Vec<f64>,
    },
    Gbt(GbtFit),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_candidates: usize,
    pub candidate_ids: Vec<String>,
    pub dataset_size: usize,
    pub ridge: f64,
    pub seed: Option<u64>,
    pub rank_deficient: bool,
}

/// A fitted regressor bound to the vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpmModel {
    pub vocabulary: TagVocabulary,
    pub vocabulary_fingerprint: String,
    pub scaling: Vec<FeatureScale>,
    pub form: ModelForm,
    pub training: TrainingMeta,
}

impl PpmModel {
    pub fn kind(&self) -> ModelKind {
        match self.form {
            ModelForm::Linear { .. } => ModelKind::Linear,
            ModelForm::Quadratic { .. } => ModelKind::Quadratic,
            ModelForm::Gbt(_) => ModelKind::Gbt,
        }
    }

    /// Fits on candidates with known performance. Counts are divided by
    /// `dataset_size`, the size of the dataset the candidates were drawn from.
    pub fn fit(
        settings: &PpmSettings,
        vocabulary: &TagVocabulary,
        dataset_size: usize,
        training: &[CandidateRecord],
        seed: Option<u64>,
    ) -> Result<PpmModel> {
        if dataset_size == 0 {
            return Err(Error::validation("dataset size must be positive"));
        }
        let p = vocabulary.len();
        let mut x = Vec::with_capacity(training.len());
        let mut y = Vec::with_capacity(training.len());
        for c in training {
            if c.features.len() != p {
                return Err(Error::Consistency(format!(
                    "candidate {:?} has {} features, vocabulary has {p}",
                    c.candidate_id,
                    c.features.len()
                )));
            }
            let perf = c.performance.ok_or_else(|| {
                Error::validation(format!("candidate {:?} has no performance", c.candidate_id))
            })?;
            x.push(
                c.features
                    .iter()
                    .map(|&v| v as f64 / dataset_size as f64)
                    .collect::<Vec<_>>(),
            );
            y.push(perf);
        }
        let ridge = settings.effective_ridge();
        let (form, rank_deficient) = match settings.kind {
            ModelKind::Linear => {
                let f = fit_ridge(&x, &y, ridge)?;
                (
                    ModelForm::Linear {
                        intercept: f.intercept,
                        weights: f.weights,
                    },
                    f.rank_deficient,
                )
            }
            ModelKind::Quadratic => {
                let xe: Vec<Vec<f64>> = x
                    .iter()
                    .map(|r| expand_quadratic(r, settings.expansion))
                    .collect();
                let f = fit_ridge(&xe, &y, ridge)?;
                (
                    ModelForm::Quadratic {
                        expansion: settings.expansion,
                        intercept: f.intercept,
                        weights: f.weights,
                    },
                    f.rank_deficient,
                )
            }
            ModelKind::Gbt => (ModelForm::Gbt(gbt::fit_gbt(&x, &y, &settings.gbt)?), false),
        };
        Ok(PpmModel {
            vocabulary: vocabulary.clone(),
            vocabulary_fingerprint: vocabulary.fingerprint(),
            scaling: vec![
                FeatureScale {
                    shift: 0.0,
                    scale: dataset_size as f64,
                };
                p
            ],
            form,
            training: TrainingMeta {
                n_candidates: training.len(),
                candidate_ids: training.iter().map(|c| c.candidate_id.clone()).collect(),
                dataset_size,
                ridge,
                seed,
                rank_deficient,
            },
        })
    }

    /// Prediction on features already mapped into model space.
    pub fn predict_scaled(&self, x: &[f64]) -> f64 {
        match &self.form {
            ModelForm::Linear { intercept, weights } => {
                intercept + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            }
            ModelForm::Quadratic {
                expansion,
                intercept,
                weights,
            } => {
                let xe = expand_quadratic(x, *expansion);
                intercept + weights.iter().zip(&xe).map(|(w, v)| w * v).sum::<f64>()
            }
            ModelForm::Gbt(g) => g.predict(x),
        }
    }

    pub fn scale_counts(&self, counts: &[u32]) -> Vec<f64> {
        counts
            .iter()
            .zip(&self.scaling)
            .map(|(&c, s)| (c as f64 - s.shift) / s.scale)
            .collect()
    }

    pub fn predict(&self, v: &FeatureVector) -> Result<f64> {
        if v.vocabulary_fingerprint != self.vocabulary_fingerprint {
            return Err(Error::FingerprintMismatch {
                what: "feature vector vocabulary".into(),
                expected: self.vocabulary_fingerprint.clone(),
                found: v.vocabulary_fingerprint.clone(),
            });
        }
        if v.counts.len() != self.scaling.len() {
            return Err(Error::Consistency(format!(
                "feature vector has {} entries, model expects {}",
                v.counts.len(),
                self.scaling.len()
            )));
        }
        Ok(self.predict_scaled(&self.scale_counts(&v.counts)))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        crate::io::json_document(self)
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(&self.to_json().expect("model serializes"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: PpmModel = crate::io::read_json(path)?;
        if m.vocabulary.fingerprint() != m.vocabulary_fingerprint {
            return Err(Error::Consistency(format!(
                "{}: stored vocabulary fingerprint does not match its tag list",
                path.display()
            )));
        }
        Ok(m)
    }
}

/// Held-out fit quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// `None` when predictions or targets are constant.
    pub spearman_rho: Option<f64>,
    pub rmse: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Scores `model` on candidates it was not trained on.
pub fn evaluate_holdout(model: &PpmModel, holdout: &[CandidateRecord]) -> Result<FitReport> {
    let train: HashSet<&str> = model
        .training
        .candidate_ids
        .iter()
        .map(String::as_str)
        .collect();
    if let Some(c) = holdout
        .iter()
        .find(|c| train.contains(c.candidate_id.as_str()))
    {
        return Err(Error::validation(format!(
            "holdout candidate {:?} was used in training",
            c.candidate_id
        )));
    }
    let mut pred = Vec::with_capacity(holdout.len());
    let mut actual = Vec::with_capacity(holdout.len());
    for c in holdout {
        let v = c.feature_vector(&model.vocabulary);
        pred.push(model.predict(&v)?);
        actual.push(c.performance.ok_or_else(|| {
            Error::validation(format!(
                "holdout candidate {:?} has no performance",
                c.candidate_id
            ))
        })?);
    }
    Ok(FitReport {
        spearman_rho: spearman(&pred, &actual)?,
        rmse: rmse(&pred, &actual)?,
        n_train: model.training.n_candidates,
        n_holdout: holdout.len(),
    })
}

/// Reads a training matrix: `candidate_id`, one column per vocabulary tag, `performance`.
pub fn read_training_matrix(path: &Path, vocab: &TagVocabulary) -> Result<Vec<CandidateRecord>> {
    use crate::candidates::{csv_err, PerformanceSource};
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let pos = |name: &str| headers.iter().position(|h| h == name);
    let id_col = pos("candidate_id")
        .ok_or_else(|| Error::validation(format!("{}: no candidate_id column", path.display())))?;
    let perf_col = pos("performance")
        .ok_or_else(|| Error::validation(format!("{}: no performance column", path.display())))?;
    let tag_cols: Vec<usize> = vocab
        .tags()
        .iter()
        .map(|t| {
            pos(t).ok_or_else(|| {
                Error::Consistency(format!("{}: no column for tag {t:?}", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = k + 2;
        let bad = |what: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            message: what.to_string(),
        };
        let features = tag_cols
            .iter()
            .map(|&c| rec.get(c).unwrap_or("").trim().parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(&format!("feature count: {e}")))?;
        let perf = rec.get(perf_col).unwrap_or("").trim();
        let performance = if perf.is_empty() {
            None
        } else {
            Some(
                perf.parse::<f64>()
                    .map_err(|e| bad(&format!("performance: {e}")))?,
            )
        };
        out.push(CandidateRecord {
            candidate_id: rec.get(id_col).unwrap_or("").to_string(),
            budget: 0,
            realized_size: 0,
            human_subset: Vec::new(),
            features,
            performance,
            performance_source: if performance.is_some() {
                PerformanceSource::Measured
            } else {
                PerformanceSource::Absent
            },
        });
    }
    Ok(out)
}
