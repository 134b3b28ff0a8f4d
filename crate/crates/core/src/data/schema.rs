use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_acyclic, PriorDag};

/// Category id reserved for items with no label in a concept.
pub const UNKNOWN: u32 = 0;

/// Concept order used for metadata files.
pub const DEFAULT_CONCEPTS: [&str; 4] = ["year", "director", "genre", "actor"];
/// director -> genre, genre -> actor; year stands alone.
pub const DEFAULT_EDGES: [(&str, &str); 2] = [("director", "genre"), ("genre", "actor")];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    /// Names of the known categories; category id `c` (1-based) is `categories[c - 1]`.
    pub categories: Vec<String>,
}

/// The `k` concepts, every item's labels in each of them, and the prior DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSchema {
    pub concepts: Vec<Concept>,
    /// `item_labels[concept][item]`: sorted category ids, `[UNKNOWN]` when unlabeled.
    pub item_labels: Vec<Vec<Vec<u32>>>,
    pub prior_dag: PriorDag,
    order: Vec<usize>,
}

impl ConceptSchema {
    pub fn new(concepts: Vec<Concept>, item_labels: Vec<Vec<Vec<u32>>>, prior_dag: PriorDag) -> Result<Self> {
        let k = concepts.len();
        if item_labels.len() != k || prior_dag.k() != k {
            return Err(Error::Shape(format!(
                "{k} concepts, {} label tables, {}-node prior graph",
                item_labels.len(),
                prior_dag.k()
            )));
        }
        let n_items = item_labels.first().map_or(0, Vec::len);
        for (c, table) in item_labels.iter().enumerate() {
            if table.len() != n_items {
                return Err(Error::Shape(format!("concept {c} labels {} items, expected {n_items}", table.len())));
            }
            let m = concepts[c].categories.len() as u32;
            for labels in table {
                if labels.is_empty() || labels.iter().any(|&l| l > m) || (labels.len() > 1 && labels.contains(&UNKNOWN)) {
                    return Err(Error::Invalid(format!("bad labels {labels:?} in concept {}", concepts[c].name)));
                }
            }
        }
        let names: Vec<String> = concepts.iter().map(|c| c.name.clone()).collect();
        let order = check_acyclic(&prior_dag, Some(&names))?;
        Ok(Self {
            concepts,
            item_labels,
            prior_dag,
            order,
        })
    }

    pub fn k(&self) -> usize {
        self.concepts.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_labels.first().map_or(0, Vec::len)
    }

    pub fn concept_names(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.name.clone()).collect()
    }

    /// Known-category vocabulary size `m_i` per concept (UNKNOWN excluded).
    pub fn category_counts(&self) -> Vec<usize> {
        self.concepts.iter().map(|c| c.categories.len()).collect()
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn concept_index(&self, name: &str) -> Option<usize> {
        self.concepts.iter().position(|c| c.name == name)
    }

    /// Replaces the prior DAG with the given named edges.
    pub fn with_prior_edges(self, edges: &[(String, String)]) -> Result<Self> {
        let idx = edges
            .iter()
            .map(|(a, b)| {
                let find = |n: &str| self.concept_index(n).ok_or_else(|| Error::Invalid(format!("unknown concept {n:?}")));
                Ok((find(a)?, find(b)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let dag = PriorDag::from_edges(self.k(), &idx)?;
        Self::new(self.concepts, self.item_labels, dag)
    }
}

struct MetaRecord {
    year: Option<String>,
    director: Option<String>,
    genres: Vec<String>,
    actors: Vec<String>,
}

fn list_field(field: Option<&str>) -> Vec<String> {
    field
        .map(|f| {
            f.split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect()
        })
        .unwrap_or_default()
}

fn single_field(field: Option<&str>) -> Option<String> {
    field.map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned)
}

/// Sorts category names numerically when they all parse as integers.
fn sorted_vocabulary(values: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = values.into_iter().collect();
    if v.iter().all(|s| s.parse::<i64>().is_ok()) {
        v.sort_by_key(|s| s.parse::<i64>().expect("checked"));
    }
    v
}

/// Reads item metadata (`item, year, director, genres, actors`; tab or comma
/// separated, lists `;`-separated, empty fields unknown) for the items of a
/// dataset given by their original ids. Items without a metadata record get
/// UNKNOWN in every concept. The prior DAG defaults to director -> genre ->
/// actor; `edges` overrides it.
pub fn load_concept_schema(path: impl AsRef<Path>, item_ids: &[u64], edges: Option<&[(String, String)]>) -> Result<ConceptSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut records: HashMap<u64, MetaRecord> = HashMap::new();
    let mut tab = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let tab = *tab.get_or_insert_with(|| line.contains('\t'));
        let fields: Vec<&str> = if tab { line.split('\t').collect() } else { line.split(',').collect() };
        if fields.len() > 5 {
            return Err(Error::parse(path, lineno, format!("expected at most 5 fields, found {}", fields.len())));
        }
        let item: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad item id {:?}", fields[0])))?;
        let rec = MetaRecord {
            year: single_field(fields.get(1).copied()),
            director: single_field(fields.get(2).copied()),
            genres: list_field(fields.get(3).copied()),
            actors: list_field(fields.get(4).copied()),
        };
        if records.insert(item, rec).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate record for item {item}")));
        }
    }

    let per_item: Vec<[Vec<String>; 4]> = item_ids
        .iter()
        .map(|id| match records.get(id) {
            Some(r) => [
                r.year.iter().cloned().collect(),
                r.director.iter().cloned().collect(),
                r.genres.clone(),
                r.actors.clone(),
            ],
            None => Default::default(),
        })
        .collect();

    let mut concepts = Vec::with_capacity(4);
    let mut item_labels = Vec::with_capacity(4);
    for (c, name) in DEFAULT_CONCEPTS.iter().enumerate() {
        let vocab = sorted_vocabulary(per_item.iter().flat_map(|labels| labels[c].iter().cloned()).collect());
        let index: HashMap<&str, u32> = vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32 + 1)).collect();
        let labels: Vec<Vec<u32>> = per_item
            .iter()
            .map(|labels| {
                let mut ids: Vec<u32> = labels[c].iter().map(|l| index[l.as_str()]).collect();
                ids.sort_unstable();
                ids.dedup();
                if ids.is_empty() {
                    ids.push(UNKNOWN);
                }
                ids
            })
            .collect();
        concepts.push(Concept {
            name: name.to_string(),
            categories: vocab,
        });
        item_labels.push(labels);
    }

    let default: Vec<(String, String)> = DEFAULT_EDGES.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    let dag = PriorDag::empty(concepts.len());
    ConceptSchema::new(concepts, item_labels, dag)?.with_prior_edges(edges.unwrap_or(&default))
}
