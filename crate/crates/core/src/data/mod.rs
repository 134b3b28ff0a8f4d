//! Interaction data: rating logs, binarization, user splits, concept labels
//! and per-user concept features.

mod features;
mod ratings;
mod schema;
mod split;
mod store;

pub use features::{build_user_concept_features, concentration, UserConceptFeature};
pub use ratings::{binarize_and_filter, load_ratings, parse_ratings, Rating, RatingTable, MIN_USER_INTERACTIONS, POSITIVE_RATING};
pub use schema::{load_concept_schema, Concept, ConceptSchema, DEFAULT_CONCEPTS, DEFAULT_EDGES, UNKNOWN};
pub use split::{split_users, HeldOutUser, SplitKind, UserSplit};
pub use store::{read_processed, write_processed, INTERACTIONS_FILE, SCHEMA_FILE, SPLIT_FILE};

/// Binary user x item interactions. `rows[u]` is the sorted list of items user
/// `u` interacted with. Ids are dense; `user_ids` / `item_ids` map back to the
/// ids of the source files.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub rows: Vec<Vec<u32>>,
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub split: Option<UserSplit>,
}

impl InteractionDataset {
    pub fn new(rows: Vec<Vec<u32>>, user_ids: Vec<u64>, item_ids: Vec<u64>) -> Self {
        debug_assert_eq!(rows.len(), user_ids.len());
        Self {
            rows,
            user_ids,
            item_ids,
            split: None,
        }
    }

    pub fn n_users(&self) -> usize {
        self.rows.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Re-expresses every interaction as a rating at the positive threshold,
    /// with original ids. Feeding this back through
    /// [`binarize_and_filter`] reproduces the dataset.
    pub fn to_rating_table(&self) -> RatingTable {
        RatingTable::from_raw(self.rows.iter().enumerate().flat_map(|(u, items)| {
            items
                .iter()
                .map(move |&i| (self.user_ids[u], self.item_ids[i as usize], POSITIVE_RATING, 0))
        }))
    }

    /// The items a user shows the encoder, and the items to rank against, for
    /// the given split. Training users reveal everything and have no targets.
    pub fn user_view(&self, user: u32, kind: SplitKind) -> Option<(&[u32], &[u32])> {
        match kind {
            SplitKind::Train => Some((&self.rows[user as usize], &[])),
            SplitKind::Validation | SplitKind::Test => {
                let h = self.split.as_ref()?.heldout(user)?;
                Some((&h.input, &h.target))
            }
        }
    }
}
