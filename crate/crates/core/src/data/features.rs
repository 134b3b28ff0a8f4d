use super::schema::{ConceptSchema, UNKNOWN};

/// Concept-level side information for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserConceptFeature {
    /// One concentration scalar in `[0, 1]` per concept.
    pub c: Vec<f64>,
    /// Per concept, the normalized category frequencies over the user's items
    /// (length `m_i`); all zeros when none of the items is labeled.
    pub histograms: Vec<Vec<f64>>,
}

impl UserConceptFeature {
    /// Histograms followed by `c`, the layout the encoder consumes.
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.histograms.iter().flatten().copied().collect();
        out.extend_from_slice(&self.c);
        out
    }
}

/// Normalized Herfindahl concentration `(sum h_j^2 - 1/m) / (1 - 1/m)`,
/// clamped to `[0, 1]`. Zero for an empty histogram or `m <= 1`.
pub fn concentration(hist: &[f64]) -> f64 {
    let m = hist.len();
    let mass: f64 = hist.iter().sum();
    if m <= 1 || mass == 0.0 {
        return 0.0;
    }
    let inv_m = 1.0 / m as f64;
    let hhi: f64 = hist.iter().map(|h| h * h).sum();
    ((hhi - inv_m) / (1.0 - inv_m)).clamp(0.0, 1.0)
}

/// Builds per-concept category histograms over `items`. An item with `L`
/// known labels adds `1 / L` to each; UNKNOWN labels add nothing.
pub fn build_user_concept_features(items: &[u32], schema: &ConceptSchema) -> UserConceptFeature {
    let mut sorted = items.to_vec();
    sorted.sort_unstable();

    let mut histograms = Vec::with_capacity(schema.k());
    let mut c = Vec::with_capacity(schema.k());
    for (concept, labels) in schema.concepts.iter().zip(&schema.item_labels) {
        let mut hist = vec![0.0; concept.categories.len()];
        let mut labeled = 0usize;
        for &item in &sorted {
            let l = &labels[item as usize];
            if l.len() == 1 && l[0] == UNKNOWN {
                continue;
            }
            labeled += 1;
            let share = 1.0 / l.len() as f64;
            for &cat in l {
                hist[cat as usize - 1] += share;
            }
        }
        if labeled > 0 {
            let total = labeled as f64;
            hist.iter_mut().for_each(|h| *h /= total);
        }
        c.push(concentration(&hist));
        histograms.push(hist);
    }
    UserConceptFeature { c, histograms }
}
