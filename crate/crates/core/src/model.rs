//! Versioned, self-describing JSON document holding one trained model and
//! the standardizer its inputs must pass through.

use serde::{Deserialize, Serialize};

use crate::classify::{KnnModel, Prediction, Standardizer, SvmModel};
use crate::cluster::GmmModel;
use crate::error::{Error, Result};
use crate::Point;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoredModel {
    Knn(KnnModel),
    Svm(SvmModel),
    Gmm(GmmModel),
}

impl StoredModel {
    pub fn kind(&self) -> &'static str {
        match self {
            StoredModel::Knn(_) => "knn",
            StoredModel::Svm(_) => "svm",
            StoredModel::Gmm(_) => "gmm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub standardizer: Standardizer,
    pub model: StoredModel,
}

impl ModelDocument {
    pub fn new(standardizer: Standardizer, model: StoredModel) -> Self {
        ModelDocument {
            version: SCHEMA_VERSION,
            standardizer,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses a document, rejecting any schema version other than the
    /// current one before looking at the payload.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(s)?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::InvalidArgument("model document has no version field".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(Error::SchemaVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    /// Classifies a raw (unstandardized) feature point.
    pub fn predict(&self, raw: &Point) -> Result<Prediction> {
        let x = self.standardizer.apply(raw);
        match &self.model {
            StoredModel::Knn(m) => m.predict(&x),
            StoredModel::Svm(m) => m.predict(&x),
            StoredModel::Gmm(_) => Err(Error::InvalidArgument(
                "a mixture model assigns clusters; it does not predict classes".into(),
            )),
        }
    }
}
