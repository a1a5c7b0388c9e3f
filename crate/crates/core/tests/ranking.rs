mod common;

use common::{random_code, random_score_accuracy, ranking_disagreements, result_at};
use photosketch::eval::{cmc_curve, match_code, rank_k_accuracy, GalleryIndex, MatchResult};
use photosketch::nn::LatentCode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ranking_matches_brute_force_on_1000_galleries() {
    assert_eq!(ranking_disagreements(1000, 2024), 0);
}

#[test]
fn self_match_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mates: Vec<(String, LatentCode<f32>)> =
        (0..12).map(|i| (format!("p{i}"), random_code(&mut rng, 8))).collect();
    let gallery = GalleryIndex::from_codes(mates.clone()).unwrap();
    let probe = mates[4].1.clone();
    let r = match_code("p4", &probe, &gallery).unwrap();
    assert_eq!(r.ranked[0].0, "p4");
    assert!(r.ranked[0].1.abs() < 1e-7);
    assert_eq!(r.mate_rank(), Some(1));
    let scaled = match_code("p4", &probe.scaled(3.0), &gallery).unwrap();
    let names = |m: &MatchResult| m.ranked.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(&r), names(&scaled));
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_reaches_one(ranks in prop::collection::vec(1usize..=40, 1..60)) {
        let results: Vec<MatchResult> = ranks.iter().map(|&r| result_at(r, 40)).collect();
        let cmc = cmc_curve(&results).unwrap();
        prop_assert_eq!(cmc.values.len(), 40);
        prop_assert!(cmc.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*cmc.values.last().unwrap(), 1.0);
        for k in [1, 7, 40, 100] {
            let expected = ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
            prop_assert!((rank_k_accuracy(&results, k).unwrap() - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn random_scores_give_k_over_n() {
    for (k, acc, p, band) in random_score_accuracy(200, 1000, 77, &[1, 10, 50, 100]) {
        assert!((acc - p).abs() <= band, "k={k}: {acc} vs {p} +- {band}");
    }
}
