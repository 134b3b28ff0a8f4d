use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::InteractionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "validation" | "val" => Ok(SplitKind::Validation),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for SplitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        })
    }
}

/// A validation or test user's items, divided into the fold-in part shown to
/// the encoder and the held-out targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOutUser {
    pub user: u32,
    pub input: Vec<u32>,
    pub target: Vec<u32>,
}

/// Strong-generalization split: disjoint user sets, with fold-in masks for
/// the held-out users. `heldout` is sorted by user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub foldin_fraction: f64,
    pub train: Vec<u32>,
    pub validation: Vec<u32>,
    pub test: Vec<u32>,
    pub heldout: Vec<HeldOutUser>,
}

impl UserSplit {
    pub fn users(&self, kind: SplitKind) -> &[u32] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    pub fn heldout(&self, user: u32) -> Option<&HeldOutUser> {
        self.heldout
            .binary_search_by_key(&user, |h| h.user)
            .ok()
            .map(|i| &self.heldout[i])
    }
}

/// Shuffles users with `seed` and partitions them by `ratios`
/// (train, validation, test). Each held-out user's items are shuffled and the
/// first `round(foldin_fraction * n)` (at least one, at most `n - 1`) become
/// encoder input; the rest are targets.
pub fn split_users(dataset: &InteractionDataset, ratios: [f64; 3], foldin_fraction: f64, seed: u64) -> Result<InteractionDataset> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios {ratios:?} must be non-negative and sum to 1")));
    }
    if !(foldin_fraction > 0.0 && foldin_fraction < 1.0) {
        return Err(Error::Split(format!("fold-in fraction {foldin_fraction} must lie in (0, 1)")));
    }

    let n = dataset.n_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users: Vec<u32> = (0..n as u32).collect();
    users.shuffle(&mut rng);

    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let mut train = users[..n_train].to_vec();
    let mut validation = users[n_train..n_train + n_val].to_vec();
    let mut test = users[n_train + n_val..].to_vec();

    let mut heldout = Vec::with_capacity(validation.len() + test.len());
    for &u in validation.iter().chain(test.iter()) {
        let mut items = dataset.rows[u as usize].clone();
        if items.len() < 2 {
            return Err(Error::Split(format!(
                "held-out user {} has {} item(s); fold-in needs at least 2",
                dataset.user_ids[u as usize],
                items.len()
            )));
        }
        items.shuffle(&mut rng);
        let n_input = ((foldin_fraction * items.len() as f64).round() as usize).clamp(1, items.len() - 1);
        let mut input = items[..n_input].to_vec();
        let mut target = items[n_input..].to_vec();
        input.sort_unstable();
        target.sort_unstable();
        heldout.push(HeldOutUser { user: u, input, target });
    }
    heldout.sort_by_key(|h| h.user);
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();

    let mut out = dataset.clone();
    out.split = Some(UserSplit {
        seed,
        ratios,
        foldin_fraction,
        train,
        validation,
        test,
        heldout,
    });
    Ok(out)
}
