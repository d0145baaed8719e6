use std::fs;
use std::path::Path;

use super::features::{FeatureVector, FEATURE_LEN};
use super::rag::Rag;
use super::AggloError;

/// Model file layout version.
pub const MODEL_VERSION: u8 = 1;
/// Version byte followed by the weights and the bias, all f64 LE.
pub const MODEL_FILE_LEN: usize = 1 + 8 * (FEATURE_LEN + 1);

/// Logistic boundary classifier over raw (unstandardized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: [f64; FEATURE_LEN],
    pub bias: f64,
}

impl LogisticModel {
    pub fn predict(&self, f: &FeatureVector) -> f64 {
        let z = self.bias
            + self
                .weights
                .iter()
                .zip(f.as_slice())
                .map(|(w, x)| w * x)
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MODEL_FILE_LEN);
        out.push(MODEL_VERSION);
        for w in self.weights.iter().chain(std::iter::once(&self.bias)) {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AggloError> {
        if bytes.len() != MODEL_FILE_LEN {
            return Err(AggloError::BadModel(format!(
                "expected {MODEL_FILE_LEN} bytes, found {}",
                bytes.len()
            )));
        }
        if bytes[0] != MODEL_VERSION {
            return Err(AggloError::BadModel(format!(
                "unsupported model version {}",
                bytes[0]
            )));
        }
        let mut values = bytes[1..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut weights = [0.0; FEATURE_LEN];
        for w in weights.iter_mut() {
            *w = values.next().unwrap();
        }
        let bias = values.next().unwrap();
        if weights.iter().chain([&bias]).any(|v| !v.is_finite()) {
            return Err(AggloError::BadModel("non-finite parameter".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), AggloError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AggloError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Merge desirability of a boundary, always in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scorer {
    /// Mean affinity over every edge of the boundary.
    MeanAffinity,
    Logistic(LogisticModel),
}

impl Scorer {
    pub fn score(&self, rag: &Rag, a: u64, b: u64) -> Result<f64, AggloError> {
        let s = match self {
            Scorer::MeanAffinity => rag.edge(a, b).ok_or(AggloError::MissingEdge(a, b))?.mean(),
            Scorer::Logistic(model) => model.predict(&rag.edge_features(a, b)?),
        };
        Ok(s.clamp(0.0, 1.0))
    }
}
