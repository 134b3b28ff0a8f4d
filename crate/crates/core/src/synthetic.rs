//! Interaction data drawn from a known latent SCM, and a dense-solve oracle
//! for the causal layer.

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{split_users, Concept, ConceptSchema, InteractionDataset, MIN_USER_INTERACTIONS};
use crate::error::{Error, Result};
use crate::graph::{CausalGraph, ElementwiseTransform, MonotoneParams, PriorDag};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    pub dag: PriorDag,
    /// Ground-truth adjacency `A*`, zero off the mask.
    pub weights: Array2<f64>,
    pub g: ElementwiseTransform,
    pub n_users: usize,
    pub n_items: usize,
    /// Categories per concept in the derived item labels.
    pub n_categories: usize,
    /// Scale of the item embeddings; larger means more peaked click distributions.
    pub item_scale: f64,
    pub clicks_per_user: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// The three-node chain `0 -> 1 -> 2` with weights `+0.8` and `-0.8`.
    pub fn chain(n_users: usize, seed: u64) -> Self {
        let dag = PriorDag::from_edges(3, &[(0, 1), (1, 2)]).expect("chain is acyclic");
        let mut weights = Array2::zeros((3, 3));
        weights[[0, 1]] = 0.8;
        weights[[1, 2]] = -0.8;
        let g = ElementwiseTransform::monotone(vec![
            MonotoneParams::from_coefficients(1.0, 0.0, 0.5).expect("valid"),
            MonotoneParams::from_coefficients(1.0, 0.0, 0.5).expect("valid"),
            MonotoneParams::from_coefficients(1.0, 0.0, 0.5).expect("valid"),
        ]);
        Self {
            k: 3,
            d: 4,
            dag,
            weights,
            g,
            n_users,
            n_items: 300,
            n_categories: 4,
            item_scale: 1.0,
            clicks_per_user: 20,
            seed,
        }
    }

    pub fn validate(&self) -> Result<CausalGraph> {
        if self.clicks_per_user > self.n_items {
            return Err(Error::Config(format!(
                "click budget {} exceeds {} items",
                self.clicks_per_user, self.n_items
            )));
        }
        if self.clicks_per_user < MIN_USER_INTERACTIONS {
            return Err(Error::Config(format!(
                "click budget {} is below the {MIN_USER_INTERACTIONS}-interaction filter",
                self.clicks_per_user
            )));
        }
        if self.g.k() != self.k || self.dag.k() != self.k || self.d == 0 || self.n_categories == 0 {
            return Err(Error::Config("synthetic spec dimensions disagree".into()));
        }
        if self.weights.iter().zip(self.dag.as_mask().iter()).any(|(w, m)| *w != 0.0 && *m == 0.0) {
            return Err(Error::Config("ground-truth weights lie off the mask".into()));
        }
        CausalGraph::new(self.dag.clone(), self.weights.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub weights: Array2<f64>,
    pub g: ElementwiseTransform,
    /// `n_users x (k d)`.
    pub eps: Array2<f64>,
    /// `n_users x (k d)`.
    pub z: Array2<f64>,
    /// `n_items x (k d)`.
    pub item_embeddings: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: InteractionDataset,
    pub schema: ConceptSchema,
    pub truth: GroundTruth,
}

/// Draws users from the SCM described by `spec` and samples their clicks.
/// The dataset is split 80/10/10 with an 80% fold-in, seeded by `spec.seed`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let graph = spec.validate()?;
    let (k, d) = (spec.k, spec.d);
    let kd = k * d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let eps = Array2::from_shape_simple_fn((spec.n_users, kd), || StandardNormal.sample(&mut rng));
    let m = graph.solve(eps.view(), d)?;
    let z = spec.g.apply_blocks(m.view(), d);

    let scale = spec.item_scale / (kd as f64).sqrt();
    let items = Array2::from_shape_simple_fn((spec.n_items, kd), || scale * { let v: f64 = StandardNormal.sample(&mut rng); v });

    // sampling without replacement in proportion to softmax(logits) via Gumbel top-k
    let logits = z.dot(&items.t());
    let mut rows = Vec::with_capacity(spec.n_users);
    for row in logits.rows() {
        let mut keyed: Vec<(f64, u32)> = row
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (l - (-u.ln()).ln(), i as u32)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut clicked: Vec<u32> = keyed[..spec.clicks_per_user].iter().map(|&(_, i)| i).collect();
        clicked.sort_unstable();
        rows.push(clicked);
    }

    // each concept labels items by the nearest of a few random directions in its block
    let mut concepts = Vec::with_capacity(k);
    let mut item_labels = Vec::with_capacity(k);
    for i in 0..k {
        let centroids = Array2::from_shape_simple_fn((spec.n_categories, d), || StandardNormal.sample(&mut rng));
        let sims = items.slice(s![.., i * d..(i + 1) * d]).dot(&centroids.t());
        let labels = sims
            .rows()
            .into_iter()
            .map(|r| {
                let best = r
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                vec![best.0 as u32 + 1]
            })
            .collect();
        item_labels.push(labels);
        concepts.push(Concept {
            name: format!("concept{i}"),
            categories: (0..spec.n_categories).map(|c| format!("cat{c}")).collect(),
        });
    }
    let schema = ConceptSchema::new(concepts, item_labels, spec.dag.clone())?;

    let dataset = InteractionDataset::new(rows, (0..spec.n_users as u64).collect(), (0..spec.n_items as u64).collect());
    let dataset = split_users(&dataset, [0.8, 0.1, 0.1], 0.8, spec.seed)?;
    Ok(SyntheticData {
        dataset,
        schema,
        truth: GroundTruth {
            weights: spec.weights.clone(),
            g: spec.g.clone(),
            eps,
            z,
            item_embeddings: items,
        },
    })
}

/// Solves `(I - A^T) m = eps` for a `k x d` block matrix with a dense LU
/// factorization, ignoring any graph structure.
pub fn dense_linear_solve_oracle(eps: ArrayView2<f64>, a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (k, d) = eps.dim();
    if a.dim() != (k, k) {
        return Err(Error::Shape(format!("A is {:?} for {k} blocks", a.dim())));
    }
    let system = DMatrix::from_fn(k, k, |i, j| f64::from(u8::from(i == j)) - a[[j, i]]);
    let rhs = DMatrix::from_fn(k, d, |i, j| eps[[i, j]]);
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invalid("I - A^T is singular".into()))?;
    Ok(Array2::from_shape_fn((k, d), |(i, j)| sol[(i, j)]))
}
