//! On-disk layout of a prepared dataset directory:
//!
//! - `interactions.tsv`: `user<TAB>item<TAB>value` triplets over dense ids, one header line
//! - `split.json`: id maps and the user split with fold-in masks
//! - `schema.json`: concepts, per-item labels and the prior DAG

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::PriorDag;

use super::{Concept, ConceptSchema, InteractionDataset, UserSplit};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const SPLIT_FILE: &str = "split.json";
pub const SCHEMA_FILE: &str = "schema.json";

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    n_users: usize,
    n_items: usize,
    n_interactions: usize,
    user_ids: Vec<u64>,
    item_ids: Vec<u64>,
    split: Option<UserSplit>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaManifest {
    concepts: Vec<Concept>,
    prior_dag: Vec<Vec<u8>>,
    topological_order: Vec<String>,
    item_labels: Vec<Vec<Vec<u32>>>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_processed(dir: impl AsRef<Path>, dataset: &InteractionDataset, schema: &ConceptSchema) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if schema.n_items() != dataset.n_items() {
        return Err(Error::Shape(format!(
            "schema labels {} items, dataset has {}",
            schema.n_items(),
            dataset.n_items()
        )));
    }

    let mut triplets = String::from("user\titem\tvalue\n");
    for (u, row) in dataset.rows.iter().enumerate() {
        for i in row {
            writeln!(triplets, "{u}\t{i}\t1").expect("string write");
        }
    }
    write(&dir.join(INTERACTIONS_FILE), triplets)?;

    let split = SplitManifest {
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        n_interactions: dataset.n_interactions(),
        user_ids: dataset.user_ids.clone(),
        item_ids: dataset.item_ids.clone(),
        split: dataset.split.clone(),
    };
    write(&dir.join(SPLIT_FILE), serde_json::to_string_pretty(&split)?)?;

    let names = schema.concept_names();
    let manifest = SchemaManifest {
        concepts: schema.concepts.clone(),
        prior_dag: schema.prior_dag.rows(),
        topological_order: schema.topological_order().iter().map(|&i| names[i].clone()).collect(),
        item_labels: schema.item_labels.clone(),
    };
    write(&dir.join(SCHEMA_FILE), serde_json::to_string(&manifest)?)?;
    Ok(())
}

pub fn read_processed(dir: impl AsRef<Path>) -> Result<(InteractionDataset, ConceptSchema)> {
    let dir = dir.as_ref();
    let split_path = dir.join(SPLIT_FILE);
    let manifest: SplitManifest = serde_json::from_str(&read(&split_path)?)?;

    let tri_path = dir.join(INTERACTIONS_FILE);
    let mut rows = vec![Vec::new(); manifest.n_users];
    for (idx, line) in read(&tri_path)?.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let mut next = |what: &str| -> Result<usize> {
            f.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(&tri_path, idx + 1, format!("bad {what}")))
        };
        let (u, i) = (next("user")?, next("item")?);
        if u >= manifest.n_users || i >= manifest.n_items {
            return Err(Error::parse(&tri_path, idx + 1, "id out of range"));
        }
        rows[u].push(i as u32);
    }
    for row in rows.iter_mut() {
        row.sort_unstable();
    }
    let mut dataset = InteractionDataset::new(rows, manifest.user_ids, manifest.item_ids);
    dataset.split = manifest.split;

    let schema_manifest: SchemaManifest = serde_json::from_str(&read(&dir.join(SCHEMA_FILE))?)?;
    let dag = PriorDag::from_rows(&schema_manifest.prior_dag)?;
    let schema = ConceptSchema::new(schema_manifest.concepts, schema_manifest.item_labels, dag)?;
    if schema.n_items() != dataset.n_items() {
        return Err(Error::Shape(format!(
            "schema labels {} items, dataset has {}",
            schema.n_items(),
            dataset.n_items()
        )));
    }
    Ok((dataset, schema))
}
