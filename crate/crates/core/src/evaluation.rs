//! Retrieval and noise-detection metrics.
//!
//! This is the only module that reads the hidden ground-truth flags.

use serde::Serialize;

use crate::dataset::RawPair;
use crate::encoders::{dot, EncoderPair};
use crate::error::{param, Error, Result};
use crate::trainer::{dataset_soft_labels, posteriors, TrainConfig, TrainerState};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RetrievalDirection {
    ImageToText,
    TextToImage,
}

/// Ground-truth match flags for a slice of pairs.
pub fn ground_truth(pairs: &[RawPair]) -> Vec<bool> {
    pairs.iter().map(RawPair::true_match).collect()
}

/// Fraction of queries whose partner (same index) lands in the top `k`.
///
/// Rows are images and columns texts. A competitor with an equal score ranks
/// ahead of the partner only if its index is lower.
pub fn recall_at_k(sim: &[Vec<f64>], k: usize, direction: RetrievalDirection) -> Result<f64> {
    let n = sim.len();
    if sim.iter().any(|row| row.len() != n) {
        return Err(param("sim_matrix", "must be square"));
    }
    if k == 0 || k > n {
        return Err(param("k", format!("{k} must be in 1..={n}")));
    }
    let score = |q: usize, c: usize| match direction {
        RetrievalDirection::ImageToText => sim[q][c],
        RetrievalDirection::TextToImage => sim[c][q],
    };
    let hits = (0..n)
        .filter(|&q| {
            let target = score(q, q);
            let ahead = (0..n)
                .filter(|&c| c != q)
                .filter(|&c| {
                    let s = score(q, c);
                    s > target || (s == target && c < q)
                })
                .count();
            ahead < k
        })
        .count();
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RetrievalReport {
    /// R@1, R@5, R@10 for image→text.
    pub i2t: [f64; 3],
    /// R@1, R@5, R@10 for text→image.
    pub t2i: [f64; 3],
    pub r_sum: f64,
}

impl RetrievalReport {
    /// Mean R@1 over both directions.
    pub fn r1(&self) -> f64 {
        (self.i2t[0] + self.t2i[0]) / 2.0
    }
}

/// R@{1,5,10} in both directions. K values above `N` are clamped to `N`.
pub fn retrieval_report(sim: &[Vec<f64>]) -> Result<RetrievalReport> {
    let n = sim.len();
    if n == 0 {
        return Err(param("sim_matrix", "is empty"));
    }
    let mut i2t = [0.0; 3];
    let mut t2i = [0.0; 3];
    for (slot, &k) in RECALL_KS.iter().enumerate() {
        i2t[slot] = recall_at_k(sim, k.min(n), RetrievalDirection::ImageToText)?;
        t2i[slot] = recall_at_k(sim, k.min(n), RetrievalDirection::TextToImage)?;
    }
    Ok(RetrievalReport {
        i2t,
        t2i,
        r_sum: i2t.iter().chain(&t2i).sum::<f64>() * 100.0,
    })
}

/// Image×text cosine similarity matrix, averaged over the given encoders.
pub fn similarity_matrix(encoders: &[&EncoderPair], pairs: &[RawPair]) -> Result<Vec<Vec<f64>>> {
    let n = pairs.len();
    let mut sim = vec![vec![0.0; n]; n];
    for enc in encoders {
        let refs: Vec<&RawPair> = pairs.iter().collect();
        let (img, txt) = enc.embed_batch(&refs)?;
        for (i, row) in sim.iter_mut().enumerate() {
            for (j, s) in row.iter_mut().enumerate() {
                *s += dot(&img[i].unit, &txt[j].unit);
            }
        }
    }
    let scale = 1.0 / encoders.len() as f64;
    sim.iter_mut().flatten().for_each(|s| *s *= scale);
    Ok(sim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// False when nothing was selected and precision was reported as 0.
    pub precision_defined: bool,
    /// False when there were no true mismatches and recall was reported as 0.
    pub recall_defined: bool,
    pub selected: usize,
    pub eta_used: Option<f64>,
}

/// Scores `selected` as the predicted-mismatched set against `true_match`.
pub fn detection_metrics(selected: &[usize], true_match: &[bool]) -> Result<DetectionReport> {
    let n = true_match.len();
    let mut predicted = vec![false; n];
    for &i in selected {
        *predicted
            .get_mut(i)
            .ok_or_else(|| param("selected", format!("index {i} out of range {n}")))? = true;
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &m) in predicted.iter().zip(true_match) {
        match (p, !m) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(DetectionReport {
        accuracy: ratio(tp + tn, n),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        precision_defined: tp + fp > 0,
        recall_defined: tp + fn_ > 0,
        selected: tp + fp,
        eta_used: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separation {
    pub auc: f64,
    pub hist_clean: Vec<u32>,
    pub hist_noisy: Vec<u32>,
}

fn histogram(values: impl Iterator<Item = f64>) -> Vec<u32> {
    let mut bins = vec![0u32; HISTOGRAM_BINS];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        bins[b] += 1;
    }
    bins
}

/// ROC AUC of `scores` as a clean-vs-noisy detector, by the rank-sum
/// statistic with ties counted ½; plus per-population histograms on `[0, 1]`.
pub fn soft_label_separation(scores: &[f64], true_match: &[bool]) -> Result<Separation> {
    if scores.len() != true_match.len() {
        return Err(Error::DimensionMismatch {
            expected: true_match.len(),
            got: scores.len(),
        });
    }
    let n_clean = true_match.iter().filter(|&&m| m).count();
    let n_noisy = true_match.len() - n_clean;
    if n_clean == 0 {
        return Err(Error::UndefinedAuc("no clean pairs"));
    }
    if n_noisy == 0 {
        return Err(Error::UndefinedAuc("no noisy pairs"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_clean = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + 1 + end) as f64 / 2.0;
        let clean_here = order[start..end].iter().filter(|&&i| true_match[i]).count();
        rank_sum_clean += mid * clean_here as f64;
        start = end;
    }
    let nc = n_clean as f64;
    let auc = (rank_sum_clean - nc * (nc + 1.0) / 2.0) / (nc * n_noisy as f64);
    let pick = |want: bool| {
        scores
            .iter()
            .zip(true_match)
            .filter(move |(_, &m)| m == want)
            .map(|(&s, _)| s)
    };
    Ok(Separation {
        auc,
        hist_clean: histogram(pick(true)),
        hist_noisy: histogram(pick(false)),
    })
}

/// Mean of both networks' dataset-wide soft labels per pair.
pub fn soft_label_scores(state: &TrainerState, pairs: &[RawPair]) -> Result<Vec<f64>> {
    let [a, b] = dataset_soft_labels(state, pairs)?;
    Ok(a.y_star.iter().zip(&b.y_star).map(|(x, y)| (x + y) / 2.0).collect())
}

/// AUC of the averaged soft labels as a clean-pair detector.
pub fn soft_label_auc(state: &TrainerState, pairs: &[RawPair]) -> Result<f64> {
    Ok(soft_label_separation(&soft_label_scores(state, pairs)?, &ground_truth(pairs))?.auc)
}

/// Mismatch detection over the training pairs for each `eta`: a pair is
/// flagged when both networks put its clean posterior below `eta`.
pub fn detection_sweep(
    state: &TrainerState,
    pairs: &[RawPair],
    cfg: &TrainConfig,
    etas: &[f64],
) -> Result<Vec<DetectionReport>> {
    let (wa, _, _) = posteriors(&state.net_a.enc, pairs, cfg)?;
    let (wb, _, _) = posteriors(&state.net_b.enc, pairs, cfg)?;
    let truth = ground_truth(pairs);
    etas.iter()
        .map(|&eta| {
            let flagged: Vec<usize> = (0..pairs.len()).filter(|&i| wa[i] < eta && wb[i] < eta).collect();
            let mut report = detection_metrics(&flagged, &truth)?;
            report.eta_used = Some(eta);
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sort each query's candidates by (score desc, index asc) and look up the partner.
    fn brute_recall(sim: &[Vec<f64>], k: usize, dir: RetrievalDirection) -> f64 {
        let n = sim.len();
        let mut hits = 0;
        for q in 0..n {
            let mut cands: Vec<(f64, usize)> = (0..n)
                .map(|c| match dir {
                    RetrievalDirection::ImageToText => (sim[q][c], c),
                    RetrievalDirection::TextToImage => (sim[c][q], c),
                })
                .collect();
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let pos = cands.iter().position(|&(_, c)| c == q).unwrap();
            if pos < k {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    }

    fn random_matrix(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn diagonal_dominant_is_perfect() {
        let mut sim = random_matrix(6, 1);
        for i in 0..6 {
            sim[i][i] = 5.0;
        }
        assert_eq!(recall_at_k(&sim, 1, RetrievalDirection::ImageToText).unwrap(), 1.0);
        assert_eq!(recall_at_k(&sim, 1, RetrievalDirection::TextToImage).unwrap(), 1.0);
    }

    #[test]
    fn partner_always_last() {
        let mut sim = random_matrix(6, 2);
        for i in 0..6 {
            sim[i][i] = -5.0;
        }
        assert_eq!(recall_at_k(&sim, 5, RetrievalDirection::ImageToText).unwrap(), 0.0);
        assert_eq!(recall_at_k(&sim, 5, RetrievalDirection::TextToImage).unwrap(), 0.0);
    }

    #[test]
    fn random_5x5_matches_brute_force() {
        for seed in 0..20 {
            let sim = random_matrix(5, seed);
            for k in 1..=5 {
                for dir in [RetrievalDirection::ImageToText, RetrievalDirection::TextToImage] {
                    assert_eq!(recall_at_k(&sim, k, dir).unwrap(), brute_recall(&sim, k, dir));
                }
            }
        }
    }

    #[test]
    fn ties_resolved_by_index() {
        let sim = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        // query 0: partner 0 wins the tie; query 1: candidate 0 goes first
        assert_eq!(recall_at_k(&sim, 1, RetrievalDirection::ImageToText).unwrap(), 0.5);
    }

    #[test]
    fn k_larger_than_n_errors() {
        let sim = random_matrix(3, 3);
        assert!(recall_at_k(&sim, 4, RetrievalDirection::ImageToText).is_err());
    }

    #[test]
    fn rsum_is_six_values() {
        let sim = random_matrix(12, 4);
        let r = retrieval_report(&sim).unwrap();
        let total: f64 = r.i2t.iter().chain(&r.t2i).sum();
        assert!((r.r_sum - 100.0 * total).abs() < 1e-9);
        assert!(r.i2t[0] <= r.i2t[1] && r.i2t[1] <= r.i2t[2]);
    }

    #[test]
    fn detection_cases() {
        let truth = [true, false, false, true, false];
        let exact = detection_metrics(&[1, 2, 4], &truth).unwrap();
        assert_eq!((exact.accuracy, exact.precision, exact.recall), (1.0, 1.0, 1.0));

        let none = detection_metrics(&[], &truth).unwrap();
        assert_eq!(none.recall, 0.0);
        assert_eq!(none.precision, 0.0);
        assert!(!none.precision_defined);

        // 2 of 3 selected truly mismatched, 4 mismatches overall
        let truth = [false, false, true, false, false, true];
        let r = detection_metrics(&[0, 1, 2], &truth).unwrap();
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
        assert!(detection_metrics(&[9], &truth).is_err());
    }

    #[test]
    fn auc_cases() {
        let s = soft_label_separation(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(s.auc, 1.0);
        let s = soft_label_separation(&[0.9, 0.8, 0.3, 0.7], &[true, true, false, false]).unwrap();
        assert!((s.auc - 1.0).abs() < 1e-15);
        let s = soft_label_separation(&[0.9, 0.7, 0.3, 0.7], &[true, true, false, false]).unwrap();
        assert!((s.auc - 3.5 / 4.0).abs() < 1e-15);
        assert_eq!(s.hist_clean.iter().sum::<u32>(), 2);
        assert!(soft_label_separation(&[0.1, 0.2], &[true, true]).is_err());
        assert!(soft_label_separation(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn identical_populations_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let truth: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        let s = soft_label_separation(&scores, &truth).unwrap();
        assert!((s.auc - 0.5).abs() < 0.03);
    }

    fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &ti) in truth.iter().enumerate() {
            for (j, &tj) in truth.iter().enumerate() {
                if ti && !tj {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_count(
            data in proptest::collection::vec((0u8..6, proptest::bool::ANY), 2..60),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let truth: Vec<bool> = data.iter().map(|(_, t)| *t).collect();
            prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
            let s = soft_label_separation(&scores, &truth).unwrap();
            prop_assert!((s.auc - brute_auc(&scores, &truth)).abs() < 1e-12);
            let cubed: Vec<f64> = scores.iter().map(|x| x * x * x + 2.0).collect();
            prop_assert_eq!(soft_label_separation(&cubed, &truth).unwrap().auc, s.auc);
        }

        #[test]
        fn recall_monotone_and_rank_invariant(seed in 0u64..200, n in 2usize..12) {
            let sim = random_matrix(n, seed);
            let exp: Vec<Vec<f64>> = sim.iter().map(|r| r.iter().map(|x| x.exp() * 3.0).collect()).collect();
            for dir in [RetrievalDirection::ImageToText, RetrievalDirection::TextToImage] {
                let mut prev = 0.0;
                for k in 1..=n {
                    let r = recall_at_k(&sim, k, dir).unwrap();
                    prop_assert!(r >= prev);
                    prev = r;
                    prop_assert_eq!(r, recall_at_k(&exp, k, dir).unwrap());
                }
            }
        }

        #[test]
        fn detection_matches_confusion_matrix(
            truth in proptest::collection::vec(proptest::bool::ANY, 1..80),
            picks in proptest::collection::vec(proptest::bool::ANY, 80),
        ) {
            let selected: Vec<usize> = (0..truth.len()).filter(|&i| picks[i]).collect();
            let r = detection_metrics(&selected, &truth).unwrap();
            let tp = selected.iter().filter(|&&i| !truth[i]).count() as f64;
            let mism = truth.iter().filter(|&&t| !t).count() as f64;
            let correct = (0..truth.len()).filter(|&i| picks[i] == !truth[i]).count() as f64;
            prop_assert!((r.accuracy - correct / truth.len() as f64).abs() < 1e-15);
            if !selected.is_empty() {
                prop_assert!((r.precision - tp / selected.len() as f64).abs() < 1e-15);
            }
            if mism > 0.0 {
                prop_assert!((r.recall - tp / mism).abs() < 1e-15);
            }
        }
    }
}
