//! Ranking metrics, the independence score, random-ranking baselines and the
//! 2-D projection of concept representations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{build_user_concept_features, ConceptSchema, InteractionDataset, SplitKind, UserConceptFeature};
use crate::error::{Error, Result};
use crate::model::{BatchInput, CadVae};

const EVAL_BATCH: usize = 256;

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Item indices of the `k` best scores, best first. Ties go to the lower
/// index; fold-in items are never returned.
pub fn top_k(scores: &[f64], foldin: &[u32], k: usize) -> Vec<u32> {
    let mut masked = vec![false; scores.len()];
    for &i in foldin {
        masked[i as usize] = true;
    }
    let mut candidates: Vec<u32> = (0..scores.len() as u32).filter(|&i| !masked[i as usize]).collect();
    let cmp = |a: &u32, b: &u32| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, cmp);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

fn hits(ranked: &[u32], targets: &[u32]) -> Vec<bool> {
    ranked.iter().map(|i| targets.contains(i)).collect()
}

/// Truncated NDCG with binary relevance. `None` when `targets` is empty.
pub fn ndcg_at_k(scores: &[f64], foldin: &[u32], targets: &[u32], k: usize) -> Option<f64> {
    if targets.is_empty() || k == 0 {
        return None;
    }
    let ranked = top_k(scores, foldin, k);
    let dcg: f64 = hits(&ranked, targets)
        .iter()
        .enumerate()
        .filter(|(_, &h)| h)
        .map(|(r, _)| discount(r + 1))
        .sum();
    let idcg: f64 = (1..=k.min(targets.len())).map(discount).sum();
    Some(dcg / idcg)
}

/// `|top-k ∩ targets| / min(k, |targets|)`. `None` when `targets` is empty.
pub fn recall_at_k(scores: &[f64], foldin: &[u32], targets: &[u32], k: usize) -> Option<f64> {
    if targets.is_empty() || k == 0 {
        return None;
    }
    let ranked = top_k(scores, foldin, k);
    let found = hits(&ranked, targets).into_iter().filter(|&h| h).count();
    Some(found as f64 / k.min(targets.len()) as f64)
}

pub fn metric_key(metric: &str, k: usize) -> String {
    format!("{metric}@{k}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: u32,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub ks: Vec<usize>,
    pub per_user: Vec<UserMetrics>,
    /// Arithmetic mean over evaluated users.
    pub mean: BTreeMap<String, f64>,
    /// Users with no targets; excluded from `mean`.
    pub skipped: Vec<u32>,
}

/// Encoder inputs for `users` as seen in `kind`: fold-in items for held-out
/// users, all items for training users. Features come from the same items.
pub fn batch_for_users(
    model: &CadVae,
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    users: &[u32],
    kind: SplitKind,
) -> Result<BatchInput> {
    let mut inputs: Vec<(&[u32], UserConceptFeature)> = Vec::with_capacity(users.len());
    for &u in users {
        let (input, _) = dataset
            .user_view(u, kind)
            .ok_or_else(|| Error::Split(format!("user {u} is not in the {kind} split")))?;
        inputs.push((input, build_user_concept_features(input, schema)));
    }
    let refs: Vec<(&[u32], &UserConceptFeature)> = inputs.iter().map(|(i, f)| (*i, f)).collect();
    BatchInput::new::<rand_chacha::ChaCha8Rng>(model.config(), &refs, None)
}

/// Ranks every user of a held-out split against their target items.
pub fn evaluate(
    model: &CadVae,
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    kind: SplitKind,
    ks: &[usize],
) -> Result<RankingResult> {
    let split = dataset.split.as_ref().ok_or_else(|| Error::Split("dataset has no user split".into()))?;
    if kind == SplitKind::Train {
        return Err(Error::Split("training users have no held-out targets".into()));
    }
    if model.config().n_items != dataset.n_items() {
        return Err(Error::Shape(format!(
            "model scores {} items, dataset has {}",
            model.config().n_items,
            dataset.n_items()
        )));
    }
    let users = split.users(kind);
    let mut per_user = Vec::with_capacity(users.len());
    let mut skipped = Vec::new();
    for chunk in users.chunks(EVAL_BATCH) {
        let batch = batch_for_users(model, dataset, schema, chunk, kind)?;
        let scores = model.score(&batch)?;
        for (&u, row) in chunk.iter().zip(scores.rows()) {
            let (input, target) = dataset.user_view(u, kind).expect("checked above");
            if target.is_empty() {
                skipped.push(u);
                continue;
            }
            let row = row.as_slice().expect("contiguous rows");
            let mut metrics = BTreeMap::new();
            for &k in ks {
                metrics.insert(metric_key("ndcg", k), ndcg_at_k(row, input, target, k).expect("non-empty"));
                metrics.insert(metric_key("recall", k), recall_at_k(row, input, target, k).expect("non-empty"));
            }
            per_user.push(UserMetrics { user: u, metrics });
        }
    }
    if per_user.is_empty() {
        return Err(Error::Split(format!("no {kind} users with targets")));
    }
    let mut mean = BTreeMap::new();
    for key in per_user[0].metrics.keys() {
        let total: f64 = per_user.iter().map(|m| m.metrics[key]).sum();
        mean.insert(key.clone(), total / per_user.len() as f64);
    }
    Ok(RankingResult {
        ks: ks.to_vec(),
        per_user,
        mean,
        skipped,
    })
}

/// Expected NDCG@k under a uniformly random ranking of the fold's candidates,
/// with the standard deviation of the fold mean. Each entry of `users` is
/// `(number of candidates, number of targets)`.
pub fn random_ndcg_baseline(users: &[(usize, usize)], k: usize) -> (f64, f64) {
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut counted = 0usize;
    for &(n, t) in users {
        if t == 0 || n == 0 {
            continue;
        }
        counted += 1;
        let depth = k.min(n);
        let s1: f64 = (1..=depth).map(discount).sum();
        let s2: f64 = (1..=depth).map(|r| discount(r).powi(2)).sum();
        let idcg: f64 = (1..=k.min(t)).map(discount).sum();
        let p = t as f64 / n as f64;
        // positions are exchangeable indicators of a sample without replacement
        let cov = if n > 1 { p * (t as f64 - 1.0) / (n as f64 - 1.0) - p * p } else { 0.0 };
        mean += p * s1 / idcg;
        var += (p * (1.0 - p) * s2 + cov * (s1 * s1 - s2)) / (idcg * idcg);
    }
    if counted == 0 {
        return (0.0, 0.0);
    }
    let n = counted as f64;
    (mean / n, var.max(0.0).sqrt() / n)
}

/// `(candidates, targets)` per user of a held-out split.
pub fn candidate_counts(dataset: &InteractionDataset, kind: SplitKind) -> Result<Vec<(usize, usize)>> {
    let split = dataset.split.as_ref().ok_or_else(|| Error::Split("dataset has no user split".into()))?;
    Ok(split
        .users(kind)
        .iter()
        .filter_map(|&u| dataset.user_view(u, kind))
        .map(|(input, target)| (dataset.n_items() - input.len(), target.len()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceScore {
    /// `1 - mean |corr|` over pairs of non-constant columns.
    pub score: f64,
    /// Columns left out because they have zero variance.
    pub constant_columns: Vec<usize>,
}

/// One minus the mean absolute Pearson correlation over all column pairs.
pub fn independence_score(z: ArrayView2<f64>) -> Result<IndependenceScore> {
    let (n, d) = z.dim();
    if d < 2 {
        return Err(Error::Invalid(format!("independence needs at least 2 dimensions, got {d}")));
    }
    if n < 2 {
        return Err(Error::Invalid(format!("independence needs at least 2 samples, got {n}")));
    }
    let mean = z.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &z - &mean;
    let norms: Vec<f64> = centered.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let mut constant_columns = Vec::new();
    let mut live = Vec::new();
    for (j, &norm) in norms.iter().enumerate() {
        let scale = mean[j].abs().max(1.0) * (n as f64).sqrt();
        if norm <= 1e-12 * scale {
            constant_columns.push(j);
        } else {
            live.push(j);
        }
    }
    if live.len() < 2 {
        return Err(Error::Invalid(format!(
            "fewer than 2 non-constant dimensions ({} constant of {d})",
            constant_columns.len()
        )));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in live.iter().enumerate() {
        for &j in &live[a + 1..] {
            let corr = centered.column(i).dot(&centered.column(j)) / (norms[i] * norms[j]);
            total += corr.clamp(-1.0, 1.0).abs();
            pairs += 1;
        }
    }
    Ok(IndependenceScore {
        score: 1.0 - total / pairs as f64,
        constant_columns,
    })
}

/// Posterior-mean endogenous representations, `users x (k d)`.
pub fn representations(
    model: &CadVae,
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    users: &[u32],
    kind: SplitKind,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((users.len(), model.config().latent_dim()));
    for (c, chunk) in users.chunks(EVAL_BATCH).enumerate() {
        let batch = batch_for_users(model, dataset, schema, chunk, kind)?;
        let z = model.represent(&batch)?;
        out.slice_mut(s![c * EVAL_BATCH..c * EVAL_BATCH + chunk.len(), ..]).assign(&z);
    }
    Ok(out)
}

/// Independence score of each concept block of `z` (`n x (k d)`).
pub fn block_independence(z: ArrayView2<f64>, d: usize) -> Result<Vec<IndependenceScore>> {
    if d == 0 || z.ncols() % d != 0 {
        return Err(Error::Shape(format!("{} columns are not whole blocks of {d}", z.ncols())));
    }
    (0..z.ncols() / d)
        .map(|i| independence_score(z.slice(s![.., i * d..(i + 1) * d])))
        .collect()
}

/// Mean silhouette coefficient of `points` under `labels`, Euclidean distance.
pub fn silhouette(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Invalid("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; n_labels];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = points.row(i);
        for j in 0..n {
            if i != j {
                let pj = points.row(j);
                let dist = pi.iter().zip(pj.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                sums[labels[j]] += dist;
            }
        }
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..n_labels)
            .filter(|&l| l != own && sizes[l] > 0)
            .map(|l| sums[l] / sizes[l] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMethod {
    Tsne,
    Pca,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsne" | "t-sne" => Ok(Self::Tsne),
            "pca" => Ok(Self::Pca),
            other => Err(Error::Config(format!("unknown projection method {other:?}"))),
        }
    }
}

impl ProjectionMethod {
    pub fn min_points(self) -> usize {
        match self {
            Self::Tsne => 10,
            Self::Pca => 3,
        }
    }
}

/// Projects the rows of `x` onto their first two principal components.
/// Component signs are fixed so the largest loading is positive.
pub fn pca_2d(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, dim) = x.dim();
    if n < ProjectionMethod::Pca.min_points() {
        return Err(Error::Invalid(format!("PCA needs at least 3 points, got {n}")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let eig = DMatrix::from_fn(dim, dim, |i, j| cov[[i, j]]).symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Array2::zeros((dim, 2));
    for (c, &idx) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            basis[[r, c]] = sign * v[r];
        }
    }
    Ok(centered.dot(&basis))
}

/// Barnes-Hut t-SNE to 2-D, started from the scaled PCA layout.
pub fn tsne_2d(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < ProjectionMethod::Tsne.min_points() {
        return Err(Error::Invalid(format!("t-SNE needs at least 10 points, got {n}")));
    }
    let init = pca_2d(x)?;
    let spread = init.column(0).std(0.0).max(1e-12);
    let init: Vec<f64> = init.iter().map(|v| v / spread * 1e-4).collect();
    let data: Vec<f64> = x.iter().copied().collect();
    let rows: Vec<&[f64]> = data.chunks(x.ncols()).collect();
    let perplexity = (((n - 2) / 3) as f64).min(30.0);
    let mut tsne: bhtsne::tSNE<f64, &[f64]> = bhtsne::tSNE::new(&rows);
    tsne.embedding_dim(2)
        .perplexity(perplexity)
        .epochs(1000)
        .initial_embedding(init)
        .barnes_hut(0.5, |a, b| a.iter().zip(b.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
    Array2::from_shape_vec((n, 2), tsne.embedding()).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(k U) x 2`, concept-major: all users of concept 0, then concept 1, ...
    pub coords: Array2<f64>,
    pub concept: Vec<usize>,
    pub user_id: Vec<u64>,
    pub concept_names: Vec<String>,
    pub silhouette: f64,
}

impl Projection {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("x\ty\tconcept\tuser_id\n");
        for (r, row) in self.coords.rows().into_iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", row[0], row[1], self.concept_names[self.concept[r]], self.user_id[r]).expect("string write");
        }
        out
    }
}

/// Projects every user's posterior-mean concept blocks jointly to 2-D. Each
/// `(user, concept)` block is one point; the silhouette score measures how
/// well points separate by concept.
pub fn project_concepts(
    model: &CadVae,
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    method: ProjectionMethod,
) -> Result<Projection> {
    let users: Vec<u32> = (0..dataset.n_users() as u32).collect();
    if users.len() < method.min_points() {
        return Err(Error::Invalid(format!(
            "{} users is below the {method:?} minimum of {}",
            users.len(),
            method.min_points()
        )));
    }
    let z = representations(model, dataset, schema, &users, SplitKind::Train)?;
    let (k, d) = (model.config().k(), model.config().d);
    let n = users.len();
    let mut points = Array2::zeros((k * n, d));
    let mut concept = Vec::with_capacity(k * n);
    let mut user_id = Vec::with_capacity(k * n);
    for i in 0..k {
        points
            .slice_mut(s![i * n..(i + 1) * n, ..])
            .assign(&z.slice(s![.., i * d..(i + 1) * d]));
        concept.extend(std::iter::repeat_n(i, n));
        user_id.extend(users.iter().map(|&u| dataset.user_ids[u as usize]));
    }
    let coords = match method {
        ProjectionMethod::Pca => pca_2d(points.view())?,
        ProjectionMethod::Tsne => tsne_2d(points.view())?,
    };
    let silhouette = silhouette(coords.view(), &concept)?;
    Ok(Projection {
        coords,
        concept,
        user_id,
        concept_names: model.config().concept_names.clone(),
        silhouette,
    })
}

pub fn export_projection(
    model: &CadVae,
    dataset: &InteractionDataset,
    schema: &ConceptSchema,
    method: ProjectionMethod,
    out_path: impl AsRef<Path>,
) -> Result<Projection> {
    let projection = project_concepts(model, dataset, schema, method)?;
    let path = out_path.as_ref();
    std::fs::write(path, projection.to_tsv()).map_err(|e| Error::io(path, e))?;
    Ok(projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn ndcg_examples() {
        let scores = [0.9, 0.8, 0.7, 0.1];
        assert_eq!(ndcg_at_k(&scores, &[], &[0, 1], 10), Some(1.0));
        assert_abs_diff_eq!(ndcg_at_k(&scores, &[], &[1], 2).unwrap(), 0.630_929_753_571_457_4, epsilon = 1e-15);
        assert_eq!(ndcg_at_k(&scores, &[], &[3], 2), Some(0.0));
        assert_eq!(ndcg_at_k(&scores, &[], &[], 2), None);
    }

    #[test]
    fn recall_examples() {
        let scores = [0.9, 0.1, 0.8, 0.2];
        assert_eq!(recall_at_k(&scores, &[], &[0, 1], 2), Some(0.5));
        assert_eq!(recall_at_k(&scores, &[], &[0, 2], 2), Some(1.0));
        let scores: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
        let targets: Vec<u32> = (0..10).collect();
        assert_eq!(recall_at_k(&scores, &[], &targets, 5), Some(1.0));
    }

    #[test]
    fn foldin_items_are_never_ranked() {
        let scores = [5.0, 4.0, 3.0, 2.0];
        assert_eq!(top_k(&scores, &[0, 2], 4), vec![1, 3]);
        assert_eq!(ndcg_at_k(&scores, &[0], &[1], 1), Some(1.0));
    }

    #[test]
    fn ties_break_by_index() {
        assert_eq!(top_k(&[1.0, 2.0, 2.0, 1.0], &[], 4), vec![1, 2, 0, 3]);
    }

    #[test]
    fn independence_examples() {
        let z = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert_abs_diff_eq!(independence_score(z.view()).unwrap().score, 0.0, epsilon = 1e-12);
        // corr = -1 / 2 = -0.5
        let z = array![[1.0, -1.0], [-1.0, 0.0], [0.0, 1.0]];
        assert_abs_diff_eq!(independence_score(z.view()).unwrap().score, 0.5, epsilon = 1e-12);
        assert!(independence_score(array![[1.0], [2.0]].view()).is_err());
    }

    #[test]
    fn constant_columns_are_reported() {
        let z = array![[1.0, 5.0, 0.0], [2.0, 5.0, 1.0], [3.0, 5.0, 0.0]];
        let r = independence_score(z.view()).unwrap();
        assert_eq!(r.constant_columns, vec![1]);
        assert_abs_diff_eq!(r.score, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_baseline_single_user() {
        // 2 candidates, 1 target, k = 1: NDCG is 1 with probability 1/2
        let (mean, sd) = random_ndcg_baseline(&[(2, 1)], 1);
        assert_abs_diff_eq!(mean, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sd, 0.5, epsilon = 1e-15);
        // every candidate is a target
        let (mean, sd) = random_ndcg_baseline(&[(5, 5)], 3);
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
        assert!(sd < 1e-7);
    }

    #[test]
    fn random_baseline_matches_enumeration() {
        // all 4! orderings of 4 candidates with targets {0, 1}, k = 3
        let perms = [
            [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
            [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
            [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
            [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
        ];
        let vals: Vec<f64> = perms
            .iter()
            .map(|p| {
                let mut scores = [0.0; 4];
                for (rank, &item) in p.iter().enumerate() {
                    scores[item] = -(rank as f64);
                }
                ndcg_at_k(&scores, &[], &[0, 1], 3).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 24.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 24.0;
        let (m, sd) = random_ndcg_baseline(&[(4, 2)], 3);
        assert_abs_diff_eq!(m, mean, epsilon = 1e-12);
        assert_abs_diff_eq!(sd, var.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = array![[0.0, 0.0], [0.0, 0.1], [10.0, 0.0], [10.0, 0.1]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98);
        let s = silhouette(pts.view(), &[0, 1, 0, 1]).unwrap();
        assert!(s < 0.0);
    }

    #[test]
    fn pca_is_deterministic_and_centered() {
        let x = Array2::from_shape_fn((30, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64);
        let a = pca_2d(x.view()).unwrap();
        assert_eq!(a, pca_2d(x.view()).unwrap());
        for c in a.columns() {
            assert_abs_diff_eq!(c.sum(), 0.0, epsilon = 1e-9);
        }
        assert!(a.column(0).var(0.0) >= a.column(1).var(0.0));
    }

    proptest! {
        #[test]
        fn metrics_ignore_monotone_transforms(
            scores in proptest::collection::vec(-5.0f64..5.0, 10..30),
            k in 1usize..12,
            seed in any::<u64>(),
        ) {
            let n = scores.len() as u32;
            let targets: Vec<u32> = (0..n).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            let foldin: Vec<u32> = (0..n).filter(|i| i % 5 == (seed % 5) as u32 && !targets.contains(i)).collect();
            let warped: Vec<f64> = scores.iter().map(|s| (0.7 * s).exp() + 3.0).collect();
            prop_assert_eq!(ndcg_at_k(&scores, &foldin, &targets, k), ndcg_at_k(&warped, &foldin, &targets, k));
            prop_assert_eq!(recall_at_k(&scores, &foldin, &targets, k), recall_at_k(&warped, &foldin, &targets, k));
            for i in top_k(&scores, &foldin, k) {
                prop_assert!(!foldin.contains(&i));
            }
        }

        #[test]
        fn independence_is_affine_invariant(
            data in proptest::collection::vec(-3.0f64..3.0, 40),
            scale in proptest::collection::vec(0.1f64..10.0, 4),
            shift in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let z = Array2::from_shape_vec((10, 4), data).unwrap();
            let w = Array2::from_shape_fn((10, 4), |(i, j)| scale[j] * z[[i, j]] + shift[j]);
            if let (Ok(a), Ok(b)) = (independence_score(z.view()), independence_score(w.view())) {
                prop_assert!((a.score - b.score).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&a.score));
            }
        }
    }
}
