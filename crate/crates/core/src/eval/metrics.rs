use crate::error::{Error, Result};
use crate::eval::MatchResult;

/// Cumulative match characteristic over mated probes.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmc {
    /// `values[k - 1]` is the rank-k accuracy, `k = 1..=gallery size`.
    pub values: Vec<f64>,
    /// Probes whose identity is not enrolled; left out of every accuracy.
    pub excluded: usize,
}

fn gallery_size(results: &[MatchResult]) -> Result<usize> {
    let n = results
        .first()
        .ok_or_else(|| Error::Gallery("no match results".into()))?
        .ranked
        .len();
    if results.iter().any(|r| r.ranked.len() != n) {
        return Err(Error::Gallery("match results come from different galleries".into()));
    }
    Ok(n)
}

/// Fraction of mated probes whose mate is within the first `k` ranks;
/// `k` beyond the gallery size is clamped.
pub fn rank_k_accuracy(results: &[MatchResult], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("rank k must be >= 1".into()));
    }
    let n = gallery_size(results)?;
    let k = k.min(n);
    let ranks: Vec<usize> = results.iter().filter_map(MatchResult::mate_rank).collect();
    if ranks.is_empty() {
        return Err(Error::Gallery("no probe has a mate in the gallery".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Rank-k accuracy for every `k` up to the gallery size.
pub fn cmc_curve(results: &[MatchResult]) -> Result<Cmc> {
    let n = gallery_size(results)?;
    let ranks: Vec<usize> = results.iter().filter_map(MatchResult::mate_rank).collect();
    let excluded = results.len() - ranks.len();
    if excluded > 0 {
        log::warn!("{excluded} probe(s) without a gallery mate excluded from accuracy");
    }
    if ranks.is_empty() {
        return Err(Error::Gallery("no probe has a mate in the gallery".into()));
    }
    let mut hits = vec![0usize; n];
    for r in ranks.iter() {
        hits[r - 1] += 1;
    }
    let mut acc = 0usize;
    let values = hits
        .iter()
        .map(|&h| {
            acc += h;
            acc as f64 / ranks.len() as f64
        })
        .collect();
    Ok(Cmc { values, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(probe: &str, ranked: &[&str]) -> MatchResult {
        MatchResult {
            probe_identity: probe.into(),
            ranked: ranked.iter().enumerate().map(|(i, s)| (s.to_string(), i as f64)).collect(),
        }
    }

    #[test]
    fn counting() {
        let mut order: Vec<String> = (0..100).map(|i| format!("g{i}")).collect();
        order.swap(0, 2);
        let refs: Vec<&str> = order.iter().map(String::as_str).collect();
        let a = result("g0", &refs);
        let b = result("g59", &refs);
        assert_eq!(a.mate_rank(), Some(3));
        assert_eq!(b.mate_rank(), Some(60));
        assert_eq!(rank_k_accuracy(&[a.clone(), b.clone()], 50).unwrap(), 0.5);
        assert_eq!(rank_k_accuracy(&[a, b], 500).unwrap(), 1.0);
    }

    #[test]
    fn unmated_probes_are_excluded() {
        let r = vec![result("a", &["a", "b"]), result("z", &["b", "a"])];
        let cmc = cmc_curve(&r).unwrap();
        assert_eq!(cmc.values, vec![1.0, 1.0]);
        assert_eq!(cmc.excluded, 1);
        assert!(rank_k_accuracy(&r, 0).is_err());
        assert!(rank_k_accuracy(&[result("z", &["a"])], 1).is_err());
    }
}
