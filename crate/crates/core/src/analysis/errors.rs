use serde::{Deserialize, Serialize};

use crate::learning::PredictionSet;

/// Counts of the three structural error types.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    /// Entity rows whose predicted role has the wrong polarity.
    pub e1: usize,
    /// Entity rows whose predicted role belongs to a foundation other than the gold MF.
    pub e2: usize,
    /// Tweets with two or more entities that all got one role although gold roles differ.
    pub e3: usize,
}

/// Rows without the needed gold label are skipped.
pub fn error_taxonomy(preds: &PredictionSet) -> ErrorCounts {
    let mut c = ErrorCounts::default();
    for t in &preds.tweets {
        for e in &t.entities {
            if let Some(g) = e.gold_role {
                if g.polarity() != e.role.polarity() {
                    c.e1 += 1;
                }
            }
            if let Some(m) = t.gold_mf {
                if e.role.foundation() != m {
                    c.e2 += 1;
                }
            }
        }
        if t.entities.len() >= 2 {
            let first = t.entities[0].role;
            let same = t.entities.iter().all(|e| e.role == first);
            let golds: Option<Vec<_>> = t.entities.iter().map(|e| e.gold_role).collect();
            let differ = golds.is_some_and(|g| g.iter().any(|r| *r != g[0]));
            if same && differ {
                c.e3 += 1;
            }
        }
    }
    c
}
