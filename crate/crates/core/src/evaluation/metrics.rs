use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::ranking::RankedList;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryPrecision {
    pub value: f64,
    /// The ranked list was empty; `value` is 0 by convention.
    pub degenerate: bool,
}

/// `|relevant ∩ top-k| / |top-k|`, where top-k holds `min(k, len)` entries.
/// The denominator is the number of retrieved items, not `k`.
pub fn precision_at_k(relevant: &BTreeSet<String>, ranked: &RankedList, k: usize) -> QueryPrecision {
    let retrieved = k.min(ranked.len());
    if retrieved == 0 {
        return QueryPrecision {
            value: 0.0,
            degenerate: true,
        };
    }
    let hits = ranked
        .entries
        .iter()
        .take(retrieved)
        .filter(|e| relevant.contains(&e.item_id))
        .count();
    QueryPrecision {
        value: hits as f64 / retrieved as f64,
        degenerate: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanPrecision {
    pub mean: f64,
    pub n_evaluated: usize,
    pub n_excluded: usize,
}

/// Arithmetic mean over queries not in `excluded`, summed in id order.
pub fn mean_precision_at_k(
    per_query: &BTreeMap<String, f64>,
    excluded: &BTreeSet<String>,
) -> Result<MeanPrecision> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (id, p) in per_query {
        if excluded.contains(id) {
            continue;
        }
        sum += p;
        n += 1;
    }
    if n == 0 {
        return Err(Error::AllExcluded);
    }
    Ok(MeanPrecision {
        mean: sum / n as f64,
        n_evaluated: n,
        n_excluded: excluded.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{Direction, RankedEntry};

    fn list(ids: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            direction: Direction::CompanyToTechnology,
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedEntry { item_id: id.to_string(), score: 1.0 - i as f64 * 0.1 })
                .collect(),
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(precision_at_k(&set(&["a", "b"]), &list(&["a", "c", "b", "d"]), 3).value, 2.0 / 3.0);
        assert_eq!(precision_at_k(&set(&["a", "b", "c"]), &list(&["a", "b", "c", "d"]), 3).value, 1.0);
        assert_eq!(precision_at_k(&set(&["a", "z"]), &list(&["a", "b"]), 5).value, 0.5);
        let empty = precision_at_k(&set(&["a"]), &list(&[]), 3);
        assert!(empty.degenerate);
        assert_eq!(empty.value, 0.0);
    }

    #[test]
    fn means() {
        let per: BTreeMap<String, f64> =
            [("a", 1.0), ("b", 0.0), ("c", 2.0 / 3.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let m = mean_precision_at_k(&per, &BTreeSet::new()).unwrap();
        assert!((m.mean - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(m.n_evaluated, 3);

        let single: BTreeMap<String, f64> = [("x".to_string(), 0.762)].into();
        assert_eq!(mean_precision_at_k(&single, &BTreeSet::new()).unwrap().mean, 0.762);

        let m = mean_precision_at_k(&per, &set(&["b", "gone"])).unwrap();
        assert_eq!((m.n_evaluated, m.n_excluded), (2, 2));
        assert!(matches!(mean_precision_at_k(&per, &set(&["a", "b", "c"])), Err(Error::AllExcluded)));
    }
}
