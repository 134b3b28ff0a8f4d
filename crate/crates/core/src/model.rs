//! Encoder, conditional prior, causal layer and decoder, with the batched
//! forward pass and its hand-derived backward pass.
//!
//! All parameters live in one flat `Vec<f64>` described by a [`Layout`], so
//! the optimizer, checkpointing and finite-difference checks all work on the
//! same buffer.
//!
//! Batch shapes: `B` users, `N` items, `F = sum m_i + k` feature columns,
//! `H` hidden units, latent width `k * d`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::UserConceptFeature;
use crate::error::{Error, Result};
use crate::graph::{
    check_acyclic, sigmoid, softplus, CausalGraph, CoefGrad, ElementwiseTransform, GMode, LatentBlocks, MonotoneParams, PriorDag,
};
use crate::nn::{glorot_uniform, Layout};
use crate::objective::{LossBreakdown, LossWeights, HALF_LN_2PI};

pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;
pub const LAMBDA2_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Multinomial,
    Gaussian,
}

/// Architecture and shape information; everything needed to rebuild a model
/// from a parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_items: usize,
    pub concept_names: Vec<String>,
    /// Known-category counts `m_i`.
    pub category_counts: Vec<usize>,
    pub prior_dag: Vec<Vec<u8>>,
    /// Latent dimensions per concept.
    pub d: usize,
    pub hidden: usize,
    pub prior_hidden: usize,
    pub g_mode: GMode,
    pub likelihood: Likelihood,
    /// When false the adjacency is pinned to zero.
    pub causal_layer: bool,
}

impl ModelConfig {
    pub fn k(&self) -> usize {
        self.concept_names.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.k() * self.d
    }

    pub fn feature_dim(&self) -> usize {
        self.category_counts.iter().sum::<usize>() + self.k()
    }

    /// The adjacency mask actually in force.
    pub fn effective_dag(&self) -> Result<PriorDag> {
        if self.causal_layer {
            PriorDag::from_rows(&self.prior_dag)
        } else {
            Ok(PriorDag::empty(self.k()))
        }
    }

    pub fn parameter_count(&self) -> usize {
        build_layout(self).0.size()
    }

    fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.d == 0 || self.hidden == 0 || self.prior_hidden == 0 || self.n_items == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.category_counts.len() != k {
            return Err(Error::Config(format!("{} category counts for {k} concepts", self.category_counts.len())));
        }
        let dag = PriorDag::from_rows(&self.prior_dag)?;
        if dag.k() != k {
            return Err(Error::Config(format!("prior graph has {} nodes for {k} concepts", dag.k())));
        }
        check_acyclic(&dag, Some(&self.concept_names))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slots {
    enc_items: usize,
    enc_feat: usize,
    enc_bias: usize,
    head_w: usize,
    head_b: usize,
    /// Per concept: `[w1, b1, w2, b2]`.
    prior: Vec<[usize; 4]>,
    dec_w1: usize,
    dec_b1: usize,
    dec_w2: usize,
    dec_b2: usize,
    causal_a: usize,
    /// `k x 3` rows of `(rho, b, s)`.
    causal_g: usize,
}

fn build_layout(c: &ModelConfig) -> (Layout, Slots) {
    let mut l = Layout::default();
    let (n, h, f, kd, d) = (c.n_items, c.hidden, c.feature_dim(), c.latent_dim(), c.d);
    let enc_items = l.push("encoder.items", n, h);
    let enc_feat = l.push("encoder.features", f, h);
    let enc_bias = l.push("encoder.bias", 1, h);
    let head_w = l.push("encoder.heads.weight", h, 2 * kd);
    let head_b = l.push("encoder.heads.bias", 1, 2 * kd);
    let prior = c
        .concept_names
        .iter()
        .zip(&c.category_counts)
        .map(|(name, &m)| {
            [
                l.push(format!("prior.{name}.w1"), m + 1, c.prior_hidden),
                l.push(format!("prior.{name}.b1"), 1, c.prior_hidden),
                l.push(format!("prior.{name}.w2"), c.prior_hidden, 2 * d),
                l.push(format!("prior.{name}.b2"), 1, 2 * d),
            ]
        })
        .collect();
    let dec_w1 = l.push("decoder.w1", kd, h);
    let dec_b1 = l.push("decoder.b1", 1, h);
    let dec_w2 = l.push("decoder.w2", h, n);
    let dec_b2 = l.push("decoder.b2", 1, n);
    let causal_a = l.push("causal.weights", c.k(), c.k());
    let causal_g = l.push("causal.g", c.k(), 3);
    let slots = Slots {
        enc_items,
        enc_feat,
        enc_bias,
        head_w,
        head_b,
        prior,
        dec_w1,
        dec_b1,
        dec_w2,
        dec_b2,
        causal_a,
        causal_g,
    };
    (l, slots)
}

/// Posterior `q(eps | x, c)`: per-concept means and log standard deviations (`k x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Array2<f64>,
    pub log_sigma: Array2<f64>,
}

/// Conditional prior `p(z | c)`: per-concept means and standard deviations (`k x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub lambda1: Array2<f64>,
    pub lambda2: Array2<f64>,
}

/// `eps = mu + exp(log_sigma) * noise`.
pub fn reparameterize(enc: &EncoderOutput, noise: &Array2<f64>) -> LatentBlocks {
    let mut eps = enc.log_sigma.mapv(f64::exp) * noise;
    eps += &enc.mu;
    LatentBlocks::exogenous(eps)
}

/// Encoder and prior inputs for a batch of users.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// Per user, `(item, value)` entries of the normalized multi-hot input.
    pub sparse: Vec<Vec<(u32, f64)>>,
    /// `B x F`: all histograms followed by `c`.
    pub features: Array2<f64>,
    /// `B x k` concentration scalars.
    pub c: Array2<f64>,
    /// Per concept, `B x (m_i + 1)`: the concept's histogram and `c_i`.
    pub prior_inputs: Vec<Array2<f64>>,
}

impl BatchInput {
    /// Builds the batch. With `dropout = Some((p, rng))` each input item is
    /// dropped with probability `p` and survivors are scaled by `1 / (1 - p)`,
    /// after L2 normalization over the full item set.
    pub fn new<R: Rng>(
        config: &ModelConfig,
        users: &[(&[u32], &UserConceptFeature)],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<Self> {
        let b = users.len();
        let k = config.k();
        let mut features = Array2::zeros((b, config.feature_dim()));
        let mut c = Array2::zeros((b, k));
        let mut prior_inputs: Vec<Array2<f64>> = config.category_counts.iter().map(|&m| Array2::zeros((b, m + 1))).collect();
        let mut sparse = Vec::with_capacity(b);
        for (u, (items, feat)) in users.iter().enumerate() {
            if items.is_empty() {
                return Err(Error::Invalid("encoder input has no interactions".into()));
            }
            if feat.histograms.len() != k || feat.c.len() != k {
                return Err(Error::Shape(format!("features for {} concepts, model has {k}", feat.c.len())));
            }
            let mut items = items.to_vec();
            items.sort_unstable();
            items.dedup();
            let norm = 1.0 / (items.len() as f64).sqrt();
            let row: Vec<(u32, f64)> = match dropout.as_mut() {
                Some((p, rng)) if *p > 0.0 => {
                    let keep = 1.0 / (1.0 - *p);
                    items
                        .iter()
                        .filter(|_| rng.random::<f64>() >= *p)
                        .map(|&i| (i, norm * keep))
                        .collect()
                }
                _ => items.iter().map(|&i| (i, norm)).collect(),
            };
            if let Some(&(i, _)) = row.iter().find(|(i, _)| *i as usize >= config.n_items) {
                return Err(Error::Shape(format!("item {i} outside {} items", config.n_items)));
            }
            sparse.push(row);

            let mut col = 0;
            for (i, hist) in feat.histograms.iter().enumerate() {
                if hist.len() != config.category_counts[i] {
                    return Err(Error::Shape(format!(
                        "concept {i} histogram has {} entries, model expects {}",
                        hist.len(),
                        config.category_counts[i]
                    )));
                }
                for (j, &h) in hist.iter().enumerate() {
                    features[[u, col + j]] = h;
                    prior_inputs[i][[u, j]] = h;
                }
                prior_inputs[i][[u, hist.len()]] = feat.c[i];
                col += hist.len();
            }
            for (i, &ci) in feat.c.iter().enumerate() {
                features[[u, col + i]] = ci;
                c[[u, i]] = ci;
            }
        }
        Ok(Self {
            sparse,
            features,
            c,
            prior_inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.sparse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparse.is_empty()
    }
}

/// Intermediate values of one forward pass.
struct Forward {
    h: Array2<f64>,
    mu: Array2<f64>,
    raw_log_sigma: Array2<f64>,
    log_sigma: Array2<f64>,
    noise: Option<Array2<f64>>,
    m: Array2<f64>,
    z: Array2<f64>,
    hd: Array2<f64>,
    logits: Array2<f64>,
    prior_hidden: Vec<Array2<f64>>,
    lambda2_raw: Array2<f64>,
    lambda1: Array2<f64>,
    lambda2: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadVae {
    config: ModelConfig,
    layout: Layout,
    slots: Slots,
    dag: PriorDag,
    theta: Vec<f64>,
}

impl CadVae {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = build_layout(&config);
        let mut theta = vec![0.0; layout.size()];
        for g in layout.groups() {
            let is_bias = g.rows == 1 && !g.name.starts_with("causal");
            if !is_bias && !g.name.starts_with("causal") {
                let fan_in = if g.name == "encoder.items" { g.rows.min(64) } else { g.rows };
                glorot_uniform(&mut theta[g.range()], fan_in, g.cols, rng);
            }
        }
        let dag = config.effective_dag()?;
        let mut model = Self {
            config,
            layout,
            slots,
            dag,
            theta,
        };
        let identity = MonotoneParams::from_coefficients(1.0, 0.0, 0.0).expect("identity is valid");
        let mut g = model.layout.view_mut(model.slots.causal_g, &mut model.theta);
        for mut row in g.rows_mut() {
            row[0] = identity.rho;
            row[1] = identity.b;
            row[2] = identity.s;
        }
        Ok(model)
    }

    /// Rebuilds a model from a parameter buffer laid out for `config`.
    pub fn from_parameters(config: ModelConfig, theta: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = build_layout(&config);
        if theta.len() != layout.size() {
            return Err(Error::Shape(format!("{} parameters, layout needs {}", theta.len(), layout.size())));
        }
        let dag = config.effective_dag()?;
        let mut model = Self {
            config,
            layout,
            slots,
            dag,
            theta,
        };
        model.remask();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_parameters(&self) -> usize {
        self.theta.len()
    }

    fn p(&self, id: usize) -> ArrayView2<'_, f64> {
        self.layout.view(id, &self.theta)
    }

    /// Zeroes adjacency weights outside the mask in force.
    pub fn remask(&mut self) {
        let mask = self.dag.as_mask();
        let mut a = self.layout.view_mut(self.slots.causal_a, &mut self.theta);
        a *= &mask;
    }

    pub fn set_adjacency(&mut self, weights: &Array2<f64>) -> Result<()> {
        let k = self.config.k();
        if weights.dim() != (k, k) {
            return Err(Error::Shape(format!("adjacency is {:?}, expected {k}x{k}", weights.dim())));
        }
        self.layout.view_mut(self.slots.causal_a, &mut self.theta).assign(weights);
        self.remask();
        Ok(())
    }

    pub fn set_transform(&mut self, g: &ElementwiseTransform) -> Result<()> {
        if g.k() != self.config.k() {
            return Err(Error::Shape(format!("transform has {} concepts", g.k())));
        }
        let mut view = self.layout.view_mut(self.slots.causal_g, &mut self.theta);
        for (mut row, p) in view.rows_mut().into_iter().zip(&g.params) {
            row[0] = p.rho;
            row[1] = p.b;
            row[2] = p.s;
        }
        Ok(())
    }

    pub fn graph(&self) -> CausalGraph {
        CausalGraph::new(self.dag.clone(), self.p(self.slots.causal_a).to_owned()).expect("validated acyclic mask")
    }

    pub fn transform(&self) -> ElementwiseTransform {
        let view = self.p(self.slots.causal_g);
        let params = view
            .rows()
            .into_iter()
            .map(|r| MonotoneParams { rho: r[0], b: r[1], s: r[2] })
            .collect();
        ElementwiseTransform {
            mode: self.config.g_mode,
            params,
        }
    }

    fn encoder_trunk(&self, batch: &BatchInput) -> Array2<f64> {
        let mut pre = batch.features.dot(&self.p(self.slots.enc_feat));
        pre += &self.p(self.slots.enc_bias).row(0);
        let items = self.p(self.slots.enc_items);
        for (mut row, entries) in pre.rows_mut().into_iter().zip(&batch.sparse) {
            for &(i, v) in entries {
                row.scaled_add(v, &items.row(i as usize));
            }
        }
        pre.mapv_inplace(f64::tanh);
        pre
    }

    /// Returns `(h, mu, raw log sigma)`.
    fn encode_rows(&self, batch: &BatchInput) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let kd = self.config.latent_dim();
        let h = self.encoder_trunk(batch);
        let mut head = h.dot(&self.p(self.slots.head_w));
        head += &self.p(self.slots.head_b).row(0);
        let mu = head.slice(s![.., ..kd]).to_owned();
        let raw = head.slice(s![.., kd..]).to_owned();
        (h, mu, raw)
    }

    /// `(hidden activations, lambda1, raw lambda2, lambda2)` for every concept, as `B x (k d)`.
    fn prior_rows(&self, batch: &BatchInput) -> (Vec<Array2<f64>>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let (b, d) = (batch.len(), self.config.d);
        let kd = self.config.latent_dim();
        let mut lambda1 = Array2::zeros((b, kd));
        let mut raw2 = Array2::zeros((b, kd));
        let mut hidden = Vec::with_capacity(self.config.k());
        for (i, slots) in self.slots.prior.iter().enumerate() {
            let mut hp = batch.prior_inputs[i].dot(&self.p(slots[0]));
            hp += &self.p(slots[1]).row(0);
            hp.mapv_inplace(f64::tanh);
            let mut out = hp.dot(&self.p(slots[2]));
            out += &self.p(slots[3]).row(0);
            lambda1.slice_mut(s![.., i * d..(i + 1) * d]).assign(&out.slice(s![.., ..d]));
            raw2.slice_mut(s![.., i * d..(i + 1) * d]).assign(&out.slice(s![.., d..]));
            hidden.push(hp);
        }
        let lambda2 = raw2.mapv(|r| softplus(r) + LAMBDA2_FLOOR);
        (hidden, lambda1, raw2, lambda2)
    }

    fn decode_rows(&self, z: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hd = z.dot(&self.p(self.slots.dec_w1));
        hd += &self.p(self.slots.dec_b1).row(0);
        hd.mapv_inplace(f64::tanh);
        let mut logits = hd.dot(&self.p(self.slots.dec_w2));
        logits += &self.p(self.slots.dec_b2).row(0);
        (hd, logits)
    }

    fn forward(&self, batch: &BatchInput, noise: Option<&Array2<f64>>) -> Result<Forward> {
        let (h, mu, raw_log_sigma) = self.encode_rows(batch);
        let log_sigma = raw_log_sigma.mapv(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
        let eps = match noise {
            Some(n) => {
                if n.dim() != mu.dim() {
                    return Err(Error::Shape(format!("noise is {:?}, latent is {:?}", n.dim(), mu.dim())));
                }
                &mu + &(log_sigma.mapv(f64::exp) * n)
            }
            None => mu.clone(),
        };
        let d = self.config.d;
        let m = self.graph().solve(eps.view(), d)?;
        let z = self.transform().apply_blocks(m.view(), d);
        let (hd, logits) = self.decode_rows(z.view());
        let (prior_hidden, lambda1, lambda2_raw, lambda2) = self.prior_rows(batch);
        Ok(Forward {
            h,
            mu,
            raw_log_sigma,
            log_sigma,
            noise: noise.cloned(),
            m,
            z,
            hd,
            logits,
            prior_hidden,
            lambda2_raw,
            lambda1,
            lambda2,
        })
    }

    fn one_user_batch(&self, items: &[u32], features: &UserConceptFeature) -> Result<BatchInput> {
        BatchInput::new::<rand_chacha::ChaCha8Rng>(&self.config, &[(items, features)], None)
    }

    fn blocks(&self, row: ndarray::ArrayView1<f64>) -> Array2<f64> {
        row.to_owned()
            .into_shape_with_order((self.config.k(), self.config.d))
            .expect("k * d entries")
    }

    /// Posterior parameters for one user.
    pub fn encode(&self, items: &[u32], features: &UserConceptFeature) -> Result<EncoderOutput> {
        let batch = self.one_user_batch(items, features)?;
        let (_, mu, raw) = self.encode_rows(&batch);
        let ls = raw.mapv(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX));
        Ok(EncoderOutput {
            mu: self.blocks(mu.row(0)),
            log_sigma: self.blocks(ls.row(0)),
        })
    }

    pub fn prior_params(&self, features: &UserConceptFeature) -> Result<PriorParams> {
        let batch = self.one_user_batch(&[0], features)?;
        let (_, l1, _, l2) = self.prior_rows(&batch);
        Ok(PriorParams {
            lambda1: self.blocks(l1.row(0)),
            lambda2: self.blocks(l2.row(0)),
        })
    }

    /// Item logits for one user's endogenous representation.
    pub fn decode(&self, z: &LatentBlocks) -> Result<Vec<f64>> {
        if z.values.dim() != (self.config.k(), self.config.d) {
            return Err(Error::Shape(format!("z is {:?}", z.values.dim())));
        }
        let (_, logits) = self.decode_rows(z.as_row().view());
        Ok(logits.row(0).to_vec())
    }

    /// Item logits from the posterior mean (`eps = mu`), one row per user.
    pub fn score(&self, batch: &BatchInput) -> Result<Array2<f64>> {
        Ok(self.forward(batch, None)?.logits)
    }

    /// Posterior-mean endogenous representation `z = F(mu)`, `B x (k d)`.
    pub fn represent(&self, batch: &BatchInput) -> Result<Array2<f64>> {
        Ok(self.forward(batch, None)?.z)
    }

    /// Batch-mean loss terms without gradients.
    pub fn loss(&self, batch: &BatchInput, clicked: &[&[u32]], noise: &Array2<f64>, w: LossWeights) -> Result<LossBreakdown> {
        let fw = self.forward(batch, Some(noise))?;
        Ok(self.loss_terms(&fw, batch, clicked, w)?.0)
    }

    /// Batch-mean loss terms and the gradient of `total` with respect to the
    /// parameter buffer. Off-mask adjacency entries get zero gradient.
    pub fn loss_and_grad(&self, batch: &BatchInput, clicked: &[&[u32]], noise: &Array2<f64>, w: LossWeights) -> Result<(LossBreakdown, Vec<f64>)> {
        let fw = self.forward(batch, Some(noise))?;
        let (loss, cache) = self.loss_terms(&fw, batch, clicked, w)?;
        let grad = self.backward(&fw, &cache, batch, clicked, w);
        Ok((loss, grad))
    }

    fn loss_terms(&self, fw: &Forward, batch: &BatchInput, clicked: &[&[u32]], w: LossWeights) -> Result<(LossBreakdown, LossCache)> {
        let b = batch.len();
        if clicked.len() != b {
            return Err(Error::Shape(format!("{} click lists for {b} users", clicked.len())));
        }
        let d = self.config.d;
        let graph = self.graph();
        let g = self.transform();
        let noise = fw.noise.as_ref().expect("loss needs a sampled forward pass");

        // log-sum-exp per row
        let lse: Array1<f64> = fw
            .logits
            .rows()
            .into_iter()
            .map(|row| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
            })
            .collect();

        let mut recon = 0.0;
        for (u, items) in clicked.iter().enumerate() {
            let row = fw.logits.row(u);
            recon += match self.config.likelihood {
                Likelihood::Multinomial => items.iter().map(|&i| row[i as usize] - lse[u]).sum::<f64>(),
                Likelihood::Gaussian => {
                    let sq: f64 = row.iter().map(|l| l * l).sum();
                    let adj: f64 = items.iter().map(|&i| 1.0 - 2.0 * row[i as usize]).sum();
                    -0.5 * (sq + adj)
                }
            };
        }

        let kl_eps: f64 = Zip::from(&fw.mu)
            .and(&fw.log_sigma)
            .fold(0.0, |acc, &mu, &ls| acc + 0.5 * ((2.0 * ls).exp() + mu * mu - 1.0 - 2.0 * ls));
        let log_q: f64 = Zip::from(&fw.log_sigma)
            .and(noise)
            .fold(0.0, |acc, &ls, &n| acc - HALF_LN_2PI - ls - 0.5 * n * n);
        let log_det: f64 = g.log_det_rows(fw.m.view(), d).sum();
        let log_p: f64 = Zip::from(&fw.z)
            .and(&fw.lambda1)
            .and(&fw.lambda2)
            .fold(0.0, |acc, &z, &m, &s| {
                let n = (z - m) / s;
                acc - HALF_LN_2PI - s.ln() - 0.5 * n * n
            });
        let kl_z = log_q - log_det - log_p;

        let sup_pre = batch.c.dot(graph.weights());
        let sup_sig = sup_pre.mapv(sigmoid);
        let sup_a: f64 = Zip::from(&batch.c).and(&sup_sig).fold(0.0, |acc, &c, &s| acc + (c - s).powi(2));

        let residual = graph.residual(fw.m.view(), d)?;
        let sup_z: f64 = residual.iter().map(|r| r * r).sum();

        let n = b as f64;
        let loss = crate::objective::total_loss(recon / n, kl_eps / n, kl_z / n, sup_a / n, sup_z / n, w);
        if !loss.total.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        Ok((
            loss,
            LossCache {
                lse,
                sup_sig,
                residual,
            },
        ))
    }

    fn backward(&self, fw: &Forward, cache: &LossCache, batch: &BatchInput, clicked: &[&[u32]], w: LossWeights) -> Vec<f64> {
        let mut grad = vec![0.0; self.layout.size()];
        let b = batch.len();
        let scale = 1.0 / b as f64;
        let (d, k) = (self.config.d, self.config.k());
        let graph = self.graph();
        let g = self.transform();
        let noise = fw.noise.as_ref().expect("sampled forward pass");
        let bw = w.beta * scale;

        // reconstruction
        let mut g_logits = Array2::zeros(fw.logits.raw_dim());
        for (u, items) in clicked.iter().enumerate() {
            let mut row = g_logits.row_mut(u);
            match self.config.likelihood {
                Likelihood::Multinomial => {
                    let total = items.len() as f64;
                    Zip::from(&mut row)
                        .and(fw.logits.row(u))
                        .for_each(|gv, &l| *gv = scale * total * (l - cache.lse[u]).exp());
                    for &i in items.iter() {
                        row[i as usize] -= scale;
                    }
                }
                Likelihood::Gaussian => {
                    Zip::from(&mut row).and(fw.logits.row(u)).for_each(|gv, &l| *gv = scale * l);
                    for &i in items.iter() {
                        row[i as usize] -= scale;
                    }
                }
            }
        }

        // decoder
        self.layout
            .view_mut(self.slots.dec_w2, &mut grad)
            .assign(&fw.hd.t().dot(&g_logits));
        self.layout
            .view_mut(self.slots.dec_b2, &mut grad)
            .row_mut(0)
            .assign(&g_logits.sum_axis(Axis(0)));
        let mut g_hd = g_logits.dot(&self.p(self.slots.dec_w2).t());
        Zip::from(&mut g_hd).and(&fw.hd).for_each(|gv, &h| *gv *= 1.0 - h * h);
        self.layout
            .view_mut(self.slots.dec_w1, &mut grad)
            .assign(&fw.z.t().dot(&g_hd));
        self.layout
            .view_mut(self.slots.dec_b1, &mut grad)
            .row_mut(0)
            .assign(&g_hd.sum_axis(Axis(0)));
        let mut g_z = g_hd.dot(&self.p(self.slots.dec_w1).t());

        // -beta log p(z | c)
        let mut g_l1 = Array2::zeros(fw.z.raw_dim());
        let mut g_l2 = Array2::zeros(fw.z.raw_dim());
        Zip::from(&mut g_z)
            .and(&mut g_l1)
            .and(&mut g_l2)
            .and(&fw.z)
            .and(&fw.lambda1)
            .and(&fw.lambda2)
            .for_each(|gz, gl1, gl2, &z, &m, &s| {
                let diff = z - m;
                let inv_var = 1.0 / (s * s);
                *gz += bw * diff * inv_var;
                *gl1 = -bw * diff * inv_var;
                *gl2 = bw * (1.0 / s - diff * diff * inv_var / s);
            });

        // z = g(m), and -beta log|det|
        let mut g_m = Array2::zeros(fw.m.raw_dim());
        let mut coef = vec![CoefGrad::default(); k];
        for i in 0..k {
            let cols = s![.., i * d..(i + 1) * d];
            let (a, _, sc) = match g.mode {
                GMode::LinearBypass => (1.0, 0.0, 0.0),
                GMode::Monotone => g.params[i].coefficients(),
            };
            let monotone = g.mode == GMode::Monotone;
            let cg = &mut coef[i];
            Zip::from(g_m.slice_mut(cols))
                .and(g_z.slice(cols))
                .and(fw.m.slice(cols))
                .for_each(|gm, &gz, &m| {
                    let t = m.tanh();
                    let sech2 = 1.0 - t * t;
                    let gp = a + sc * sech2;
                    *gm = gz * gp;
                    if monotone {
                        cg.a += gz * m;
                        cg.b += gz;
                        cg.s += gz * t;
                        let gpp = -2.0 * sc * t * sech2;
                        *gm -= bw * gpp / gp;
                        cg.a -= bw / gp;
                        cg.s -= bw * sech2 / gp;
                    }
                });
        }
        if g.mode == GMode::Monotone {
            let mut gg = self.layout.view_mut(self.slots.causal_g, &mut grad);
            for i in 0..k {
                let p = g.coef_to_param_grad(i, coef[i]);
                gg[[i, 0]] = p.rho;
                gg[[i, 1]] = p.b;
                gg[[i, 2]] = p.s;
            }
        }

        // gamma2 * sum ||(I - A^T) m||^2
        let mut g_a = Array2::<f64>::zeros((k, k));
        if w.gamma2 != 0.0 {
            let g_r = cache.residual.mapv(|r| 2.0 * w.gamma2 * scale * r);
            g_m += &g_r;
            for (i, j) in graph.dag().edge_list() {
                let wij = graph.weight(i, j);
                let (mut gmi, grj) = (g_m.slice_mut(s![.., i * d..(i + 1) * d]), g_r.slice(s![.., j * d..(j + 1) * d]));
                gmi.scaled_add(-wij, &grj);
            }
            g_a -= &graph.edge_outer(g_r.view(), fw.m.view(), d);
        }

        // m = (I - A^T)^{-1} eps
        let g_eps = graph.solve_adjoint(g_m.view(), d);
        g_a += &graph.edge_outer(g_eps.view(), fw.m.view(), d);

        // gamma1 * ||c - sigmoid(A^T c)||^2
        if w.gamma1 != 0.0 {
            let g_pre = Zip::from(&batch.c)
                .and(&cache.sup_sig)
                .map_collect(|&c, &s| -2.0 * w.gamma1 * scale * (c - s) * s * (1.0 - s));
            g_a += &batch.c.t().dot(&g_pre);
        }
        g_a *= &self.dag.as_mask();
        self.layout.view_mut(self.slots.causal_a, &mut grad).assign(&g_a);

        // eps = mu + exp(log_sigma) * noise, kl_eps and -beta log q(eps)
        let mut g_head = Array2::zeros((b, 2 * k * d));
        {
            let (mut g_mu, mut g_ls) = g_head.multi_slice_mut((s![.., ..k * d], s![.., k * d..]));
            Zip::from(&mut g_mu)
                .and(&g_eps)
                .and(&fw.mu)
                .for_each(|gm, &ge, &mu| *gm = ge + scale * mu);
            Zip::from(&mut g_ls)
                .and(&g_eps)
                .and(&fw.log_sigma)
                .and(&fw.raw_log_sigma)
                .and(noise)
                .for_each(|gl, &ge, &ls, &raw, &n| {
                    let sigma = ls.exp();
                    let v = ge * sigma * n + scale * (sigma * sigma - 1.0) - bw;
                    *gl = if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(&raw) { v } else { 0.0 };
                });
        }

        // encoder heads and trunk
        self.layout
            .view_mut(self.slots.head_w, &mut grad)
            .assign(&fw.h.t().dot(&g_head));
        self.layout
            .view_mut(self.slots.head_b, &mut grad)
            .row_mut(0)
            .assign(&g_head.sum_axis(Axis(0)));
        let mut g_h = g_head.dot(&self.p(self.slots.head_w).t());
        Zip::from(&mut g_h).and(&fw.h).for_each(|gv, &h| *gv *= 1.0 - h * h);
        self.layout
            .view_mut(self.slots.enc_bias, &mut grad)
            .row_mut(0)
            .assign(&g_h.sum_axis(Axis(0)));
        self.layout
            .view_mut(self.slots.enc_feat, &mut grad)
            .assign(&batch.features.t().dot(&g_h));
        {
            let mut g_items = self.layout.view_mut(self.slots.enc_items, &mut grad);
            for (u, entries) in batch.sparse.iter().enumerate() {
                for &(i, v) in entries {
                    g_items.row_mut(i as usize).scaled_add(v, &g_h.row(u));
                }
            }
        }

        // prior networks
        for (i, slots) in self.slots.prior.iter().enumerate() {
            let cols = s![.., i * d..(i + 1) * d];
            let mut g_out = Array2::zeros((b, 2 * d));
            g_out.slice_mut(s![.., ..d]).assign(&g_l1.slice(cols));
            Zip::from(g_out.slice_mut(s![.., d..]))
                .and(g_l2.slice(cols))
                .and(fw.lambda2_raw.slice(cols))
                .for_each(|go, &gl, &raw| *go = gl * sigmoid(raw));
            let hp = &fw.prior_hidden[i];
            self.layout.view_mut(slots[2], &mut grad).assign(&hp.t().dot(&g_out));
            self.layout
                .view_mut(slots[3], &mut grad)
                .row_mut(0)
                .assign(&g_out.sum_axis(Axis(0)));
            let mut g_hp = g_out.dot(&self.p(slots[2]).t());
            Zip::from(&mut g_hp).and(hp).for_each(|gv, &h| *gv *= 1.0 - h * h);
            self.layout
                .view_mut(slots[0], &mut grad)
                .assign(&batch.prior_inputs[i].t().dot(&g_hp));
            self.layout
                .view_mut(slots[1], &mut grad)
                .row_mut(0)
                .assign(&g_hp.sum_axis(Axis(0)));
        }
        grad
    }
}

struct LossCache {
    lse: Array1<f64>,
    sup_sig: Array2<f64>,
    residual: Array2<f64>,
}
