//! Labeled feature datasets and their JSON file format.
//!
//! ```json
//! {"n": 3, "d_feat": 2, "samples": [
//!   {"x": [0.5, -1.0], "y": [1, 0, 1]},
//!   {"fmap": {"d": 2, "locs": 2, "data": [0.1, 0.3, -1.0, 2.0]}, "y": [0, 1, 0]}
//! ]}
//! ```
//! `fmap.data` is the `d x locs` feature map in row-major order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Features, LabeledSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    n: usize,
    d_feat: usize,
    samples: Vec<LabeledSample>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    n: usize,
    d_feat: usize,
    samples: Vec<SampleRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRepr {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fmap: Option<FeatureMapRepr>,
    y: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureMapRepr {
    d: usize,
    locs: usize,
    data: Vec<f64>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        let samples = r
            .samples
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let features = match (s.x, s.fmap) {
                    (Some(x), None) => {
                        if x.iter().any(|v| !v.is_finite()) {
                            return Err(Error::NonFinite("dataset sample"));
                        }
                        Features::Pooled(x)
                    }
                    (None, Some(f)) => Features::Map(Matrix::new(f.d, f.locs, f.data)?),
                    _ => {
                        return Err(Error::Invalid(format!(
                            "sample {i} must carry exactly one of `x` or `fmap`"
                        )))
                    }
                };
                LabeledSample::new(features, s.y)
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(r.n, r.d_feat, samples)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            n: d.n,
            d_feat: d.d_feat,
            samples: d
                .samples
                .into_iter()
                .map(|s| {
                    let (x, fmap) = match s.features {
                        Features::Pooled(x) => (Some(x), None),
                        Features::Map(m) => (
                            None,
                            Some(FeatureMapRepr {
                                d: m.rows(),
                                locs: m.cols(),
                                data: m.as_slice().to_vec(),
                            }),
                        ),
                    };
                    SampleRepr {
                        x,
                        fmap,
                        y: s.targets,
                    }
                })
                .collect(),
        }
    }
}

impl Dataset {
    pub fn new(n: usize, d_feat: usize, samples: Vec<LabeledSample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.targets.len() != n {
                return Err(Error::Invalid(format!(
                    "sample {i} has {} targets, expected {n}",
                    s.targets.len()
                )));
            }
            if s.features.dim() != d_feat {
                return Err(Error::Invalid(format!(
                    "sample {i} has feature dimension {}, expected {d_feat}",
                    s.features.dim()
                )));
            }
            if let Features::Map(m) = &s.features {
                if m.cols() == 0 {
                    return Err(Error::Invalid(format!(
                        "sample {i} has an empty feature map"
                    )));
                }
            }
        }
        Ok(Dataset { n, d_feat, samples })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Binary `samples x n` target matrix.
    pub fn label_matrix(&self) -> Matrix {
        Matrix::from_fn(self.samples.len(), self.n, |s, c| {
            f64::from(self.samples[s].targets[c])
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
