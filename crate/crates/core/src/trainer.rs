//! Minibatch training with beta warm-up, adjacency re-masking and early
//! stopping on validation NDCG@100.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointMeta, VERSION};
use crate::data::{build_user_concept_features, ConceptSchema, InteractionDataset, SplitKind, UserConceptFeature};
use crate::error::{Error, Result};
use crate::eval::{block_independence, evaluate, representations};
use crate::graph::GMode;
use crate::model::{BatchInput, CadVae, Likelihood, ModelConfig};
use crate::objective::{LossBreakdown, LossWeights};

/// Validation metrics tracked every epoch.
pub const VALIDATION_KEYS: [&str; 4] = ["ndcg@50", "ndcg@100", "recall@20", "recall@50"];
pub const SELECTION_KEY: &str = "ndcg@100";

/// Training hyperparameters. Read from a flat `key = value` TOML file; any
/// key left out takes its default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Latent dimensions per concept.
    pub d: usize,
    pub hidden: usize,
    pub prior_hidden: usize,
    pub beta_max: f64,
    pub beta_anneal_steps: u64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub g_mode: GMode,
    pub likelihood: Likelihood,
    /// When false the adjacency stays at zero.
    pub causal_layer: bool,
    /// Input dropout probability on the multi-hot vector.
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 20,
            hidden: 600,
            prior_hidden: 32,
            beta_max: 20.0,
            beta_anneal_steps: 2000,
            gamma1: 1.0,
            gamma2: 1.0,
            learning_rate: 1e-3,
            batch_size: 100,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            g_mode: GMode::Monotone,
            likelihood: Likelihood::Multinomial,
            causal_layer: true,
            dropout: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("hidden", self.hidden),
            ("prior_hidden", self.prior_hidden),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.beta_anneal_steps < 1 {
            return Err(Error::Config("beta_anneal_steps must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        LossWeights::new(self.beta_max, self.gamma1, self.gamma2)?;
        Ok(())
    }

    pub fn model_config(&self, dataset: &InteractionDataset, schema: &ConceptSchema) -> ModelConfig {
        ModelConfig {
            n_items: dataset.n_items(),
            concept_names: schema.concept_names(),
            category_counts: schema.category_counts(),
            prior_dag: schema.prior_dag.rows(),
            d: self.d,
            hidden: self.hidden,
            prior_hidden: self.prior_hidden,
            g_mode: self.g_mode,
            likelihood: self.likelihood,
            causal_layer: self.causal_layer,
        }
    }

    /// Linear warm-up from 0 to `beta_max` over `beta_anneal_steps` steps.
    pub fn beta_at(&self, step: u64) -> f64 {
        self.beta_max * (step as f64 / self.beta_anneal_steps as f64).min(1.0)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Beta at the last step of the epoch.
    pub beta: f64,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub validation: BTreeMap<String, f64>,
}

/// NDCG@{50,100} and Recall@{20,50} on the validation users.
pub fn validate(model: &CadVae, dataset: &InteractionDataset, schema: &ConceptSchema) -> Result<BTreeMap<String, f64>> {
    let result = evaluate(model, dataset, schema, SplitKind::Validation, &[20, 50, 100])?;
    Ok(VALIDATION_KEYS
        .iter()
        .map(|&k| (k.to_string(), result.mean[k]))
        .collect())
}

pub fn train(dataset: &InteractionDataset, schema: &ConceptSchema, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(dataset, schema, config, |_| Ok(()))
}

/// Trains and returns the checkpoint with the best validation NDCG@100.
/// `on_epoch` sees every epoch record as it is produced.
pub fn train_with(
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    let split = dataset.split.as_ref().ok_or_else(|| Error::Split("dataset has no user split".into()))?;
    if schema.n_items() != dataset.n_items() {
        return Err(Error::Shape(format!(
            "schema labels {} items, dataset has {}",
            schema.n_items(),
            dataset.n_items()
        )));
    }
    let mut users: Vec<u32> = split.users(SplitKind::Train).to_vec();
    if users.is_empty() {
        return Err(Error::Split("no training users".into()));
    }
    let features: Vec<UserConceptFeature> = (0..dataset.n_users())
        .map(|u| build_user_concept_features(&dataset.rows[u], schema))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CadVae::new(config.model_config(dataset, schema), &mut rng)?;
    let mut opt = crate::nn::Adam::new(model.num_parameters(), config.learning_rate);
    let kd = model.config().latent_dim();
    let hash = config.hash();

    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_score = f64::NEG_INFINITY;
    let mut since_best = 0usize;
    let mut step = 0u64;
    let diverged = |step: u64, reason: String, best: &Option<Checkpoint>| Error::Diverged {
        step,
        reason,
        last_good: best.clone().map(Box::new),
    };

    for epoch in 0..config.max_epochs {
        users.shuffle(&mut rng);
        let mut sum = [0.0f64; 6];
        let mut batches = 0usize;
        let mut beta = config.beta_at(step);
        for chunk in users.chunks(config.batch_size) {
            beta = config.beta_at(step);
            let weights = LossWeights::new(beta, config.gamma1, config.gamma2)?;
            let rows: Vec<(&[u32], &UserConceptFeature)> = chunk
                .iter()
                .map(|&u| (dataset.rows[u as usize].as_slice(), &features[u as usize]))
                .collect();
            let batch = BatchInput::new(model.config(), &rows, Some((config.dropout, &mut rng)))?;
            let noise = Array2::from_shape_simple_fn((chunk.len(), kd), || StandardNormal.sample(&mut rng));
            let clicked: Vec<&[u32]> = chunk.iter().map(|&u| dataset.rows[u as usize].as_slice()).collect();
            let (loss, grad) = match model.loss_and_grad(&batch, &clicked, &noise, weights) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => return Err(diverged(step, format!("non-finite {what}"), &best)),
                Err(e) => return Err(e),
            };
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(step, "non-finite gradient".into(), &best));
            }
            opt.update(model.parameters_mut(), &grad);
            model.remask();
            step += 1;
            for (s, v) in sum
                .iter_mut()
                .zip([loss.recon, loss.kl_eps, loss.kl_z, loss.sup_a, loss.sup_z, loss.total])
            {
                *s += v;
            }
            batches += 1;
        }
        if model.parameters().iter().any(|p| !p.is_finite()) {
            return Err(diverged(step, "non-finite parameters".into(), &best));
        }

        let n = batches as f64;
        let validation = validate(&model, dataset, schema)?;
        let record = EpochRecord {
            epoch,
            step,
            beta,
            loss: LossBreakdown {
                recon: sum[0] / n,
                kl_eps: sum[1] / n,
                kl_z: sum[2] / n,
                sup_a: sum[3] / n,
                sup_z: sum[4] / n,
                total: sum[5] / n,
            },
            validation,
        };
        on_epoch(&record)?;
        let score = record.validation[SELECTION_KEY];
        history.push(record);
        if score > best_score {
            best_score = score;
            since_best = 0;
            best = Some(Checkpoint {
                model: model.clone(),
                meta: CheckpointMeta {
                    version: VERSION.to_string(),
                    model: model.config().clone(),
                    train: config.clone(),
                    config_hash: hash.clone(),
                    seed: config.seed,
                    epoch,
                    step,
                    history: Vec::new(),
                },
            });
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let mut best = best.expect("at least one epoch ran");
    best.meta.history = history;
    Ok(best)
}

/// One row of a beta sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub config_hash: String,
    /// Mean over concepts of the per-block independence score.
    pub independence: Option<f64>,
    pub per_concept_independence: Vec<f64>,
    pub ndcg_at_100: Option<f64>,
    pub recall_at_20: Option<f64>,
    pub error: Option<String>,
}

/// Independence per concept block, over every user's posterior mean computed
/// from all of the user's items.
pub fn concept_independence(model: &CadVae, dataset: &InteractionDataset, schema: &ConceptSchema) -> Result<Vec<f64>> {
    let users: Vec<u32> = (0..dataset.n_users() as u32).collect();
    let z = representations(model, dataset, schema, &users, SplitKind::Train)?;
    Ok(block_independence(z.view(), model.config().d)?
        .into_iter()
        .map(|s| s.score)
        .collect())
}

/// Test-fold metrics and block independence of a trained model.
pub fn sweep_point(checkpoint: &Checkpoint, dataset: &InteractionDataset, schema: &ConceptSchema) -> Result<SweepRow> {
    let test = evaluate(&checkpoint.model, dataset, schema, SplitKind::Test, &[20, 100])?;
    let per = concept_independence(&checkpoint.model, dataset, schema)?;
    Ok(SweepRow {
        beta: checkpoint.meta.train.beta_max,
        config_hash: checkpoint.meta.config_hash.clone(),
        independence: Some(per.iter().sum::<f64>() / per.len() as f64),
        per_concept_independence: per,
        ndcg_at_100: Some(test.mean["ndcg@100"]),
        recall_at_20: Some(test.mean["recall@20"]),
        error: None,
    })
}

/// Trains once per `beta_max` value with everything else shared. A failed
/// run is recorded in its row and the sweep moves on.
pub fn sweep(dataset: &InteractionDataset, schema: &ConceptSchema, base: &TrainConfig, betas: &[f64]) -> Vec<SweepRow> {
    betas
        .iter()
        .map(|&beta| {
            let cfg = TrainConfig {
                beta_max: beta,
                ..base.clone()
            };
            let result = train(dataset, schema, &cfg).and_then(|ckpt| sweep_point(&ckpt, dataset, schema));
            result.unwrap_or_else(|e| SweepRow {
                beta,
                config_hash: cfg.hash(),
                independence: None,
                per_concept_independence: Vec::new(),
                ndcg_at_100: None,
                recall_at_20: None,
                error: Some(e.to_string()),
            })
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer
/// than two pairs or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
