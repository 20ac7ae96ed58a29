//! On-disk model files. The `"model"` field says which classifier is inside.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use restrictml_core::{LabeledDataset, Label};
use restrictml_learn::cnn::Network;
use restrictml_learn::forest::ForestModel;
use restrictml_learn::svm::SvmModel;
use restrictml_learn::to_matrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub shape_trace: [usize; 6],
    pub network: Network,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelFile {
    Svm(SvmModel),
    Forest(ForestModel),
    Cnn(CnnModel),
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Svm(_) => "svm",
            ModelFile::Forest(_) => "forest",
            ModelFile::Cnn(_) => "cnn",
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
    }

    /// SVM and forest see the full feature row; the CNN sees only SEQ.
    pub fn predict(&self, data: &LabeledDataset) -> Result<Vec<Label>> {
        Ok(match self {
            ModelFile::Svm(m) => m.predict(to_matrix(&data.rows()).view())?,
            ModelFile::Forest(m) => m.predict(to_matrix(&data.rows()).view())?,
            ModelFile::Cnn(m) => m.network.predict(&data.seq_rows())?,
        })
    }
}
