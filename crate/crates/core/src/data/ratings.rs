use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::InteractionDataset;

/// Ratings at or above this value count as positive implicit feedback.
pub const POSITIVE_RATING: f64 = 4.0;
/// Users with fewer surviving interactions are dropped.
pub const MIN_USER_INTERACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u32,
    pub item: u32,
    pub rating: f64,
    pub timestamp: i64,
}

/// Raw explicit ratings with ids remapped to dense indices. `user_ids[u]` and
/// `item_ids[i]` give back the original ids; both are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingTable {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    pub records: Vec<Rating>,
}

impl RatingTable {
    /// Builds a table from records carrying original ids. Duplicate
    /// `(user, item)` pairs keep the highest rating.
    pub fn from_raw(raw: impl IntoIterator<Item = (u64, u64, f64, i64)>) -> Self {
        let mut best: BTreeMap<(u64, u64), (f64, i64)> = BTreeMap::new();
        for (u, i, r, t) in raw {
            best.entry((u, i))
                .and_modify(|e| {
                    if r > e.0 {
                        *e = (r, t);
                    }
                })
                .or_insert((r, t));
        }
        let mut user_ids: Vec<u64> = best.keys().map(|&(u, _)| u).collect();
        user_ids.dedup();
        let mut item_ids: Vec<u64> = best.keys().map(|&(_, i)| i).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let records = best
            .into_iter()
            .map(|((u, i), (rating, timestamp))| Rating {
                user: user_ids.binary_search(&u).expect("user present") as u32,
                item: item_ids.binary_search(&i).expect("item present") as u32,
                rating,
                timestamp,
            })
            .collect();
        Self {
            user_ids,
            item_ids,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Delimiter {
    Tab,
    Comma,
    DoubleColon,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains("::") {
            Delimiter::DoubleColon
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Comma
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split('\t').collect(),
            Delimiter::Comma => line.split(',').collect(),
            Delimiter::DoubleColon => line.split("::").collect(),
        }
    }
}

/// Reads `(user, item, rating[, timestamp])` records. The delimiter (tab,
/// comma or `::`) is detected from the first record. With `has_header` the
/// first non-empty line is skipped.
pub fn load_ratings(path: impl AsRef<Path>, has_header: bool) -> Result<RatingTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, path, has_header)
}

pub fn parse_ratings(text: &str, path: &Path, has_header: bool) -> Result<RatingTable> {
    let mut delimiter = None;
    let mut header_pending = has_header;
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| Delimiter::detect(line));
        let fields = delim.split(line);
        let lineno = idx + 1;
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::parse(path, lineno, format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        let field = |n: usize, what: &str| -> Result<&str> {
            let f = fields[n].trim();
            if f.is_empty() {
                Err(Error::parse(path, lineno, format!("empty {what}")))
            } else {
                Ok(f)
            }
        };
        let user: u64 = field(0, "user id")?
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad user id {:?}", fields[0])))?;
        let item: u64 = field(1, "item id")?
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad item id {:?}", fields[1])))?;
        let rating: f64 = field(2, "rating")?
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad rating {:?}", fields[2])))?;
        if !rating.is_finite() {
            return Err(Error::parse(path, lineno, "rating is not finite"));
        }
        let timestamp: i64 = match fields.get(3) {
            Some(t) => t
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad timestamp {t:?}")))?,
            None => 0,
        };
        raw.push((user, item, rating, timestamp));
    }
    if raw.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(RatingTable::from_raw(raw))
}

/// Keeps ratings `>= 4` as positive interactions and drops users with fewer
/// than five of them, repeating until no user violates the constraint. Users
/// and items are re-indexed densely (sorted by original id).
pub fn binarize_and_filter(table: &RatingTable) -> Result<InteractionDataset> {
    let mut per_user: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for r in table.records.iter().filter(|r| r.rating >= POSITIVE_RATING) {
        per_user
            .entry(table.user_ids[r.user as usize])
            .or_default()
            .push(table.item_ids[r.item as usize]);
    }
    loop {
        let before = per_user.len();
        per_user.retain(|_, items| items.len() >= MIN_USER_INTERACTIONS);
        if per_user.len() == before {
            break;
        }
    }
    if per_user.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut item_ids: Vec<u64> = per_user.values().flatten().copied().collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let user_ids: Vec<u64> = per_user.keys().copied().collect();
    let rows = per_user
        .into_values()
        .map(|items| {
            let mut row: Vec<u32> = items
                .iter()
                .map(|i| item_ids.binary_search(i).expect("item present") as u32)
                .collect();
            row.sort_unstable();
            row.dedup();
            row
        })
        .collect();
    Ok(InteractionDataset::new(rows, user_ids, item_ids))
}
