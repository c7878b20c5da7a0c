//! Noisy pair half-replacing.
//!
//! A pair that both networks consider confidently mismatched is not thrown
//! away. Keeping its text, we look up the `K` bank texts closest to it and,
//! among the images stored alongside them, take the one most similar to the
//! text. That yields a new (bank image, own text) feature pair. The mirror
//! construction keeps the image and borrows a bank text. Bank features are
//! constants: only the kept modality's encoder receives gradient.

use serde::Serialize;

use crate::dataset::RawPair;
use crate::encoders::{dot, triplet_on_features, EncoderPair, Embedding, Grads, Modality};
use crate::error::{param, Error, Result};
use crate::memory_bank::BankSnapshot;
use crate::rank_correlation::{label_from_anchors, pair_correlation};
use crate::trainer::soft_margin;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ReplaceImage,
    ReplaceText,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ReplaceImage => "replace-image",
            Direction::ReplaceText => "replace-text",
        }
    }

    /// The modality whose encoder still receives gradient.
    pub fn kept(self) -> Modality {
        match self {
            Direction::ReplaceImage => Modality::Text,
            Direction::ReplaceText => Modality::Image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementPair {
    pub kept: Embedding,
    pub replacement_feat: Vec<f64>,
    pub direction: Direction,
    pub source_pair_id: usize,
    pub bank_entry_index: usize,
    /// Similarity between the replacement feature and the kept feature.
    pub similarity: f64,
}

impl ReplacementPair {
    pub fn kept_feat(&self) -> &[f64] {
        &self.kept.unit
    }

    /// (image feature, text feature) of the rebuilt pair.
    pub fn features(&self) -> (&[f64], &[f64]) {
        match self.direction {
            Direction::ReplaceImage => (&self.replacement_feat, &self.kept.unit),
            Direction::ReplaceText => (&self.kept.unit, &self.replacement_feat),
        }
    }
}

/// Indices whose clean posterior is below `eta` under both networks.
pub fn select_npr_candidates(posteriors_a: &[f64], posteriors_b: &[f64], eta: f64) -> Result<Vec<usize>> {
    if posteriors_a.len() != posteriors_b.len() {
        return Err(Error::DimensionMismatch {
            expected: posteriors_a.len(),
            got: posteriors_b.len(),
        });
    }
    if !(0.0..1.0).contains(&eta) {
        return Err(param("eta", format!("{eta} is outside [0, 1)")));
    }
    Ok((0..posteriors_a.len())
        .filter(|&i| posteriors_a[i] < eta && posteriors_b[i] < eta)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub indices: Vec<usize>,
    /// `k` exceeded the bank size and was clamped.
    pub clamped: bool,
}

fn topk_by_distance(stored: &[Vec<f64>], query: &[f64], k: usize) -> Result<TopK> {
    if k == 0 {
        return Err(param("k", "must be at least 1"));
    }
    if stored.is_empty() {
        return Err(Error::EmptyBank);
    }
    let dists: Vec<f64> = stored
        .iter()
        .map(|s| s.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..stored.len()).collect();
    // stable sort keeps lower indices first among ties
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]));
    let clamped = k > stored.len();
    order.truncate(k.min(stored.len()));
    Ok(TopK {
        indices: order,
        clamped,
    })
}

/// Bank entries whose text feature is nearest to `txt_feat`.
pub fn topk_similar_texts(bank: &BankSnapshot, txt_feat: &[f64], k: usize) -> Result<TopK> {
    topk_by_distance(&bank.txt, txt_feat, k)
}

/// Bank entries whose image feature is nearest to `img_feat`.
pub fn topk_similar_images(bank: &BankSnapshot, img_feat: &[f64], k: usize) -> Result<TopK> {
    topk_by_distance(&bank.img, img_feat, k)
}

fn argmax_similarity(stored: &[Vec<f64>], candidates: &[usize], query: &[f64]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &c in candidates {
        let s = stored.get(c).ok_or_else(|| {
            param("candidate_indices", format!("{c} is outside the snapshot"))
        })?;
        let sim = dot(s, query);
        let better = match best {
            None => true,
            Some((bi, bs)) => sim > bs || (sim == bs && c < bi),
        };
        if better {
            best = Some((c, sim));
        }
    }
    best.ok_or(Error::EmptyCandidates)
}

/// Keeps the text and borrows the best-matching bank image among the candidates.
pub fn pick_replacement_image(
    bank: &BankSnapshot,
    candidate_indices: &[usize],
    txt: &Embedding,
    source_pair_id: usize,
) -> Result<ReplacementPair> {
    let (j, sim) = argmax_similarity(&bank.img, candidate_indices, &txt.unit)?;
    Ok(ReplacementPair {
        kept: txt.clone(),
        replacement_feat: bank.img[j].clone(),
        direction: Direction::ReplaceImage,
        source_pair_id,
        bank_entry_index: j,
        similarity: sim,
    })
}

/// Keeps the image and borrows the best-matching bank text among the candidates.
pub fn pick_replacement_text(
    bank: &BankSnapshot,
    candidate_indices: &[usize],
    img: &Embedding,
    source_pair_id: usize,
) -> Result<ReplacementPair> {
    let (j, sim) = argmax_similarity(&bank.txt, candidate_indices, &img.unit)?;
    Ok(ReplacementPair {
        kept: img.clone(),
        replacement_feat: bank.txt[j].clone(),
        direction: Direction::ReplaceText,
        source_pair_id,
        bank_entry_index: j,
        similarity: sim,
    })
}

/// Both half-replacements for one pair: (replace-image, replace-text).
pub fn half_replace(
    bank: &BankSnapshot,
    img: &Embedding,
    txt: &Embedding,
    k: usize,
    source_pair_id: usize,
) -> Result<[ReplacementPair; 2]> {
    let by_text = topk_similar_texts(bank, &txt.unit, k)?;
    let by_image = topk_similar_images(bank, &img.unit, k)?;
    Ok([
        pick_replacement_image(bank, &by_text.indices, txt, source_pair_id)?,
        pick_replacement_text(bank, &by_image.indices, img, source_pair_id)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginParams {
    pub alpha: f64,
    pub m: f64,
    /// Normalization anchors (γ, μ) for the rebuilt pairs' correlations.
    pub gamma: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct NoisyLoss {
    /// Unweighted `L_noisy`.
    pub loss: f64,
    pub grads: Grads,
    /// Soft label of each replacement, in input order.
    pub y_star: Vec<f64>,
}

/// `L_noisy` over a batch of replacements.
///
/// Replacements are grouped by direction; each group is scored with the
/// hard-negative triplet loss, negatives drawn from the same group, and the
/// two group losses are averaged with weight ½ each. A group with fewer than
/// two members has no negatives and contributes nothing.
///
/// `sources[i]` is the raw pair that `replacements[i]` was built from.
pub fn noisy_loss(
    enc: &EncoderPair,
    replacements: &[ReplacementPair],
    sources: &[&RawPair],
    bank: &BankSnapshot,
    margins: &MarginParams,
) -> Result<NoisyLoss> {
    if replacements.len() != sources.len() {
        return Err(Error::DimensionMismatch {
            expected: replacements.len(),
            got: sources.len(),
        });
    }
    let mut grads = Grads::zeros_like(enc);
    let mut y_star = vec![0.0; replacements.len()];
    let mut loss = 0.0;
    for direction in [Direction::ReplaceImage, Direction::ReplaceText] {
        let members: Vec<usize> = (0..replacements.len())
            .filter(|&i| replacements[i].direction == direction)
            .collect();
        let mut img = Vec::with_capacity(members.len());
        let mut txt = Vec::with_capacity(members.len());
        let mut group_margins = Vec::with_capacity(members.len());
        for &i in &members {
            let (fi, ft) = replacements[i].features();
            let corre = pair_correlation(bank, fi, ft)?;
            let y = label_from_anchors(corre, margins.gamma, margins.mu);
            y_star[i] = y;
            group_margins.push(soft_margin(y, margins.m, margins.alpha));
            img.push(fi);
            txt.push(ft);
        }
        if members.len() < 2 {
            continue;
        }
        let fl = triplet_on_features(&img, &txt, &group_margins)?;
        loss += 0.5 * fl.loss;
        for (slot, &i) in members.iter().enumerate() {
            let r = &replacements[i];
            match direction {
                Direction::ReplaceImage => EncoderPair::backprop(
                    &mut grads.w_txt,
                    &r.kept,
                    &sources[i].text_raw,
                    &fl.d_txt[slot],
                ),
                Direction::ReplaceText => EncoderPair::backprop(
                    &mut grads.w_img,
                    &r.kept,
                    &sources[i].image_raw,
                    &fl.d_img[slot],
                ),
            }
        }
    }
    grads.w_img.data.iter_mut().for_each(|g| *g *= 0.5);
    grads.w_txt.data.iter_mut().for_each(|g| *g *= 0.5);
    Ok(NoisyLoss { loss, grads, y_star })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory_bank::MemoryBank;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = dot(v, v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding {
            unit: unit(v),
            norm: 1.0,
        }
    }

    #[test]
    fn candidate_selection() {
        assert_eq!(select_npr_candidates(&[0.1, 0.3], &[0.2, 0.1], 0.25).unwrap(), vec![0]);
        assert!(select_npr_candidates(&[0.1, 0.3], &[0.2, 0.1], 0.0).unwrap().is_empty());
        assert!(select_npr_candidates(&[0.1], &[0.2, 0.1], 0.25).is_err());
    }

    fn text_bank(dists: &[f64]) -> BankSnapshot {
        // texts on a line from the origin query (0,0,...) are not unit, but the
        // distance ordering is all top-K looks at
        BankSnapshot {
            img: dists.iter().map(|_| vec![0.0, 0.0]).collect(),
            txt: dists.iter().map(|&d| vec![d, 0.0]).collect(),
        }
    }

    #[test]
    fn topk_hand_case() {
        let bank = text_bank(&[0.5, 0.1, 0.9, 0.3]);
        let top = topk_similar_texts(&bank, &[0.0, 0.0], 2).unwrap();
        assert_eq!(top.indices, vec![1, 3]);
        assert!(!top.clamped);
        let all = topk_similar_texts(&bank, &[0.0, 0.0], 4).unwrap();
        assert_eq!(all.indices, vec![1, 3, 0, 2]);
        let over = topk_similar_texts(&bank, &[0.0, 0.0], 9).unwrap();
        assert!(over.clamped);
        assert_eq!(over.indices.len(), 4);
    }

    #[test]
    fn topk_exact_match_first_and_ties_by_index() {
        let bank = text_bank(&[0.4, 0.2, 0.2, 0.7]);
        let top = topk_similar_texts(&bank, &[0.7, 0.0], 1).unwrap();
        assert_eq!(top.indices, vec![3]);
        let top = topk_similar_texts(&bank, &[0.0, 0.0], 2).unwrap();
        assert_eq!(top.indices, vec![1, 2]);
    }

    fn sim_bank(sims: &[f64]) -> (BankSnapshot, Embedding) {
        // query along e1; stored feature k has cosine sims[k] with it
        let q = emb(&[1.0, 0.0]);
        let feats: Vec<Vec<f64>> = sims.iter().map(|&s| vec![s, (1.0 - s * s).sqrt()]).collect();
        (
            BankSnapshot {
                img: feats.clone(),
                txt: feats,
            },
            q,
        )
    }

    #[test]
    fn argmax_replacement_image() {
        let (bank, q) = sim_bank(&[0.2, 0.8, 0.5]);
        let r = pick_replacement_image(&bank, &[0, 1, 2], &q, 7).unwrap();
        assert_eq!(r.bank_entry_index, 1);
        assert_eq!(r.direction, Direction::ReplaceImage);
        assert_eq!(r.replacement_feat, bank.img[1]);
        assert_eq!(r.source_pair_id, 7);
        let r = pick_replacement_image(&bank, &[2], &q, 7).unwrap();
        assert_eq!(r.bank_entry_index, 2);
        assert!(matches!(
            pick_replacement_image(&bank, &[], &q, 7),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn argmax_replacement_text_mirror() {
        let (bank, q) = sim_bank(&[0.2, 0.8, 0.5]);
        let r = pick_replacement_text(&bank, &[0, 1, 2], &q, 3).unwrap();
        assert_eq!(r.bank_entry_index, 1);
        assert_eq!(r.direction, Direction::ReplaceText);
        assert_eq!(r.replacement_feat, bank.txt[1]);
        assert_eq!(pick_replacement_text(&bank, &[0], &q, 3).unwrap().bank_entry_index, 0);
        assert!(pick_replacement_text(&bank, &[], &q, 3).is_err());
    }

    #[test]
    fn candidate_set_is_images_of_topk_texts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut bank = MemoryBank::new(32, 4).unwrap();
        for _ in 0..32 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            bank.push(&unit(&a), &unit(&b)).unwrap();
        }
        let snap = bank.snapshot();
        let txt = emb(&[0.3, -0.2, 0.9, 0.1]);
        let img = emb(&[0.5, 0.5, -0.1, 0.2]);
        let [ri, rt] = half_replace(&snap, &img, &txt, 5, 0).unwrap();
        let top_t = topk_similar_texts(&snap, &txt.unit, 5).unwrap();
        assert!(top_t.indices.contains(&ri.bank_entry_index));
        assert_eq!(ri.replacement_feat, snap.img[ri.bank_entry_index]);
        let top_i = topk_similar_images(&snap, &img.unit, 5).unwrap();
        assert!(top_i.indices.contains(&rt.bank_entry_index));
        assert_eq!(rt.replacement_feat, snap.txt[rt.bank_entry_index]);
        // determinism
        let again = half_replace(&snap, &img, &txt, 5, 0).unwrap();
        assert_eq!(again[0], ri);
        assert_eq!(again[1], rt);
    }

    fn setup(seed: u64) -> (EncoderPair, Vec<RawPair>, BankSnapshot) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderPair::new(4, 6, 5, &mut rng);
        let pairs: Vec<RawPair> = (0..6)
            .map(|i| {
                let x: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f32> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                RawPair::new(i, x, y, false)
            })
            .collect();
        let mut bank = MemoryBank::new(16, 4).unwrap();
        for _ in 0..16 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            bank.push(&unit(&a), &unit(&b)).unwrap();
        }
        (enc, pairs, bank.snapshot())
    }

    fn replacements(
        enc: &EncoderPair,
        pairs: &[RawPair],
        bank: &BankSnapshot,
        keep: Option<Direction>,
    ) -> (Vec<ReplacementPair>, Vec<usize>) {
        let mut reps = Vec::new();
        let mut src = Vec::new();
        for (i, p) in pairs.iter().enumerate() {
            let img = enc.embed_image(&p.image_raw).unwrap();
            let txt = enc.embed_text(&p.text_raw).unwrap();
            for r in half_replace(bank, &img, &txt, 4, p.pair_id).unwrap() {
                if keep.is_none_or(|d| d == r.direction) {
                    reps.push(r);
                    src.push(i);
                }
            }
        }
        (reps, src)
    }

    const MARGINS: MarginParams = MarginParams {
        alpha: 0.2,
        m: 10.0,
        gamma: 0.6,
        mu: -0.2,
    };

    #[test]
    fn empty_replacements_give_zero() {
        let (enc, _, bank) = setup(1);
        let nl = noisy_loss(&enc, &[], &[], &bank, &MARGINS).unwrap();
        assert_eq!(nl.loss, 0.0);
        assert_eq!(nl.grads, Grads::zeros_like(&enc));
    }

    #[test]
    fn replaced_modality_gets_no_gradient() {
        let (enc, pairs, bank) = setup(2);
        let (reps, src) = replacements(&enc, &pairs, &bank, Some(Direction::ReplaceImage));
        let sources: Vec<&RawPair> = src.iter().map(|&i| &pairs[i]).collect();
        let nl = noisy_loss(&enc, &reps, &sources, &bank, &MARGINS).unwrap();
        assert!(nl.grads.w_img.data.iter().all(|&g| g == 0.0));

        let (reps, src) = replacements(&enc, &pairs, &bank, Some(Direction::ReplaceText));
        let sources: Vec<&RawPair> = src.iter().map(|&i| &pairs[i]).collect();
        let nl = noisy_loss(&enc, &reps, &sources, &bank, &MARGINS).unwrap();
        assert!(nl.grads.w_txt.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn noisy_gradient_matches_finite_differences_with_fixed_labels() {
        // Anchors above every possible coefficient pin y* at 0, so margins
        // are constant and the loss is differentiable in the kept side.
        let (enc, pairs, bank) = setup(4);
        let (reps, src) = replacements(&enc, &pairs, &bank, None);
        let sources: Vec<&RawPair> = src.iter().map(|&i| &pairs[i]).collect();
        let sat = MarginParams { gamma: 2.0, mu: 1.5, ..MARGINS };
        let nl = noisy_loss(&enc, &reps, &sources, &bank, &sat).unwrap();
        assert!(nl.y_star.iter().all(|&y| y == 0.0));
        assert!(nl.loss > 0.0);
        let h = 1e-6;
        for m in [Modality::Image, Modality::Text] {
            let g = nl.grads.get(m);
            for idx in [0, 3, 7, 11] {
                let mut plus = enc.clone();
                let mut minus = enc.clone();
                match m {
                    Modality::Image => {
                        plus.w_img.data[idx] += h;
                        minus.w_img.data[idx] -= h;
                    }
                    Modality::Text => {
                        plus.w_txt.data[idx] += h;
                        minus.w_txt.data[idx] -= h;
                    }
                }
                let f = |e: &EncoderPair| {
                    let reps2: Vec<ReplacementPair> = reps
                        .iter()
                        .zip(&src)
                        .map(|(r, &i)| {
                            let kept = match r.direction {
                                Direction::ReplaceImage => e.embed_text(&pairs[i].text_raw).unwrap(),
                                Direction::ReplaceText => e.embed_image(&pairs[i].image_raw).unwrap(),
                            };
                            ReplacementPair { kept, ..r.clone() }
                        })
                        .collect();
                    noisy_loss(e, &reps2, &sources, &bank, &sat).unwrap().loss
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                assert!((fd - g.data[idx]).abs() < 1e-6, "{m:?}[{idx}] fd {fd} vs {}", g.data[idx]);
            }
        }
    }
}
