use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{AdamW, AdamWConfig, MlpDims, ResidualMlp, N_FEATURES};
use super::FeatureVector;
use crate::error::{Error, Result};
use crate::sim::{RngStream, StreamId};

/// Features that are log-scaled before min-max scaling.
const LOG_FEATURES: [usize; 2] = [2, 3];

/// Min-max scaling fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: [f64; N_FEATURES],
    pub max: [f64; N_FEATURES],
}

fn pre(i: usize, v: f64) -> f64 {
    if LOG_FEATURES.contains(&i) {
        v.max(0.0).ln_1p()
    } else {
        v
    }
}

impl Normalizer {
    pub fn fit(features: &[FeatureVector]) -> Self {
        let mut min = [f64::INFINITY; N_FEATURES];
        let mut max = [f64::NEG_INFINITY; N_FEATURES];
        for f in features {
            for (i, v) in f.to_array().into_iter().enumerate() {
                let v = pre(i, v);
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        for i in 0..N_FEATURES {
            if !min[i].is_finite() {
                (min[i], max[i]) = (0.0, 0.0);
            }
        }
        Normalizer { min, max }
    }

    /// Scaled into `[0, 1]`; constant features map to 0.
    pub fn apply(&self, f: &FeatureVector) -> [f64; N_FEATURES] {
        let mut out = [0.0; N_FEATURES];
        for (i, v) in f.to_array().into_iter().enumerate() {
            let span = self.max[i] - self.min[i];
            out[i] = if span > 0.0 {
                ((pre(i, v) - self.min[i]) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dims: MlpDims,
    pub optimizer: AdamWConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: MlpDims::default(),
            optimizer: AdamWConfig::default(),
            batch_size: 256,
            epochs: 100,
            seed: crate::topology::DEFAULT_SEED,
        }
    }
}

/// Trained WC-DNN with its input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AwcModel {
    pub net: ResidualMlp<f64>,
    pub normalizer: Normalizer,
    pub hyperparameters: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct ModelBody {
    format: String,
    dims: MlpDims,
    normalizer: Normalizer,
    hyperparameters: TrainConfig,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(flatten)]
    body: ModelBody,
    checksum: String,
}

const FORMAT: &str = "wc-dnn/1";

fn checksum(body: &ModelBody) -> String {
    let bytes = serde_json::to_vec(body).expect("model serialises");
    hex::encode(Sha256::digest(&bytes))
}

impl AwcModel {
    pub fn predict(&self, f: &FeatureVector) -> f64 {
        self.net.forward(&self.normalizer.apply(f))
    }

    pub fn to_json(&self) -> String {
        let body = ModelBody {
            format: FORMAT.into(),
            dims: self.net.dims(),
            normalizer: self.normalizer.clone(),
            hyperparameters: self.hyperparameters,
            params: self.net.params().to_vec(),
        };
        let checksum = checksum(&body);
        let mut s = serde_json::to_string(&ModelFile { body, checksum }).expect("model serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::CorruptModelFile(e.to_string()))?;
        if file.body.format != FORMAT {
            return Err(Error::CorruptModelFile(format!(
                "unsupported format `{}`",
                file.body.format
            )));
        }
        if checksum(&file.body) != file.checksum {
            return Err(Error::CorruptModelFile("checksum mismatch".into()));
        }
        let net = ResidualMlp::from_params(file.body.dims, file.body.params).ok_or_else(|| {
            Error::CorruptModelFile("parameter count does not match dimensions".into())
        })?;
        Ok(AwcModel {
            net,
            normalizer: file.body.normalizer,
            hyperparameters: file.body.hyperparameters,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training L1 loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub train_mae: f64,
    pub val_mae: Option<f64>,
    pub test_mae: Option<f64>,
}

fn mae(model: &AwcModel, data: &[(FeatureVector, f64)]) -> Option<f64> {
    (!data.is_empty()).then(|| {
        data.iter()
            .map(|(f, y)| (model.predict(f) - y).abs())
            .sum::<f64>()
            / data.len() as f64
    })
}

/// Fits the regressor with L1 loss and AdamW. Normalisation statistics
/// come from `train_set` only.
pub fn train(
    train_set: &[(FeatureVector, f64)],
    val_set: &[(FeatureVector, f64)],
    test_set: &[(FeatureVector, f64)],
    cfg: &TrainConfig,
) -> Result<(AwcModel, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let feats: Vec<FeatureVector> = train_set.iter().map(|(f, _)| *f).collect();
    let normalizer = Normalizer::fit(&feats);
    let xs: Vec<[f64; N_FEATURES]> = feats.iter().map(|f| normalizer.apply(f)).collect();
    let ys: Vec<f64> = train_set.iter().map(|(_, y)| *y).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;

    let mut init_rng = RngStream::new(cfg.seed, StreamId::WeightInit);
    let mut shuffle_rng = RngStream::new(cfg.seed, StreamId::TrainingShuffle);
    let mut net = ResidualMlp::<f64>::init(cfg.dims, &mut init_rng, mean);
    let mut opt = AdamW::new(cfg.optimizer, cfg.dims.n_params());
    let mut grad = vec![0.0; cfg.dims.n_params()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| &xs[i][..]).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let loss = net.l1_loss_grad(&bx, &by, &mut grad);
            total += loss * chunk.len() as f64;
            opt.step(net.params_mut(), &grad);
        }
        epoch_loss.push(total / xs.len() as f64);
    }
    let model = AwcModel {
        net,
        normalizer,
        hyperparameters: *cfg,
    };
    let report = TrainReport {
        epoch_loss,
        train_mae: mae(&model, train_set).unwrap_or(0.0),
        val_mae: mae(&model, val_set),
        test_mae: mae(&model, test_set),
    };
    Ok((model, report))
}
