//! Soft correspondence labels from rank correlation of distance profiles.
//!
//! For a target pair, the image feature is compared against every stored
//! image feature of a memory bank and the text feature against every stored
//! text feature. A matched pair sees the same neighbourhood structure in both
//! modalities, so the two distance lists are rank-correlated. The Spearman
//! coefficient is then stretched onto `[0, 1]` between two anchors taken
//! from the batch: `γ`, the mean of the largest 10% of coefficients, and `μ`,
//! the mean of the smallest 1%.
//!
//! Ranks follow the counting definition `R(s_i) = |{j : s_j ≤ s_i}|`, so tied
//! values all receive the largest rank of their group.

use rayon::prelude::*;

use crate::encoders::EncoderPair;
use crate::dataset::RawPair;
use crate::error::{Error, Result};
use crate::memory_bank::BankSnapshot;

/// Width below which `γ − max(0, μ)` is treated as a collapsed window.
pub const DEGENERATE_WINDOW: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfilePair {
    img_dists: Vec<f64>,
    txt_dists: Vec<f64>,
}

impl DistanceProfilePair {
    pub fn new(img_dists: Vec<f64>, txt_dists: Vec<f64>) -> Result<Self> {
        if img_dists.len() != txt_dists.len() {
            return Err(Error::DimensionMismatch {
                expected: img_dists.len(),
                got: txt_dists.len(),
            });
        }
        if img_dists.len() < 2 {
            return Err(Error::BankTooSmall {
                have: img_dists.len(),
                need: 2,
            });
        }
        if img_dists.iter().chain(&txt_dists).any(|d| !(*d >= 0.0)) {
            return Err(Error::DegenerateInput(
                "distances must be finite and non-negative".into(),
            ));
        }
        Ok(DistanceProfilePair { img_dists, txt_dists })
    }

    pub fn img_dists(&self) -> &[f64] {
        &self.img_dists
    }

    pub fn txt_dists(&self) -> &[f64] {
        &self.txt_dists
    }
}

/// `R(s_i) = |{j : s_j ≤ s_i}|`.
pub fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let v = values[order[start]];
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == v {
            end += 1;
        }
        for &i in &order[start..end] {
            out[i] = end;
        }
        start = end;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of the two rank vectors. `None` when either rank
/// vector is constant and the coefficient is undefined.
pub fn spearman(profile: &DistanceProfilePair) -> Option<f64> {
    spearman_slices(&profile.img_dists, &profile.txt_dists)
}

pub(crate) fn spearman_slices(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra: Vec<f64> = ranks(a).into_iter().map(|r| r as f64).collect();
    let rb: Vec<f64> = ranks(b).into_iter().map(|r| r as f64).collect();
    pearson(&ra, &rb)
}

/// Textbook Spearman with fractional (average) ranks for ties. Only used to
/// quantify how far the max-rank tie rule drifts from the usual convention.
pub fn spearman_average_ranks(a: &[f64], b: &[f64]) -> Option<f64> {
    fn avg_ranks(values: &[f64]) -> Vec<f64> {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
        let mut out = vec![0.0; values.len()];
        let mut start = 0;
        while start < order.len() {
            let mut end = start + 1;
            while end < order.len() && values[order[end]] == values[order[start]] {
                end += 1;
            }
            let r = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                out[i] = r;
            }
            start = end;
        }
        out
    }
    pearson(&avg_ranks(a), &avg_ranks(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    pub corre: Vec<f64>,
    pub y_star: Vec<f64>,
    pub gamma: f64,
    pub mu: f64,
    /// Set when the normalization window collapsed and the step fallback was used.
    pub degenerate: bool,
}

fn top_count(n: usize, frac: f64) -> usize {
    ((frac * n as f64).ceil() as usize).clamp(1, n)
}

/// Maps one coefficient onto `[0, 1]` using the anchors `γ` and `μ`.
pub fn label_from_anchors(corre: f64, gamma: f64, mu: f64) -> f64 {
    let floor = mu.max(0.0);
    if gamma - floor < DEGENERATE_WINDOW {
        return if gamma > 0.0 && corre >= gamma { 1.0 } else { 0.0 };
    }
    if corre <= floor {
        0.0
    } else if corre > gamma {
        1.0
    } else {
        (corre - floor) / (gamma - floor)
    }
}

/// Anchors `(γ, μ)`: means of the largest 10% and smallest 1% of the values,
/// counts rounded up with a floor of one element.
pub fn anchors(corre: &[f64]) -> Result<(f64, f64)> {
    if corre.is_empty() {
        return Err(Error::DegenerateInput("no correlation values".into()));
    }
    let mut sorted = corre.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k_top = top_count(n, 0.10);
    let k_bot = top_count(n, 0.01);
    let gamma = sorted[n - k_top..].iter().sum::<f64>() / k_top as f64;
    let mu = sorted[..k_bot].iter().sum::<f64>() / k_bot as f64;
    Ok((gamma, mu))
}

pub fn normalize_labels(corre: &[f64]) -> Result<SoftLabelSet> {
    let (gamma, mu) = anchors(corre)?;
    Ok(with_anchors(corre, gamma, mu))
}

/// Labels `corre` against externally supplied anchors.
pub fn with_anchors(corre: &[f64], gamma: f64, mu: f64) -> SoftLabelSet {
    let degenerate = gamma - mu.max(0.0) < DEGENERATE_WINDOW;
    SoftLabelSet {
        y_star: corre
            .iter()
            .map(|&c| label_from_anchors(c, gamma, mu))
            .collect(),
        corre: corre.to_vec(),
        gamma,
        mu,
        degenerate,
    }
}

/// Rank correlation between a pair's image-side and text-side distance
/// profiles against the bank. Undefined correlations map to 0.
pub fn pair_correlation(bank: &BankSnapshot, img_feat: &[f64], txt_feat: &[f64]) -> Result<f64> {
    if bank.len() < 2 {
        return Err(Error::BankTooSmall {
            have: bank.len(),
            need: 2,
        });
    }
    let img = bank.distances_image(img_feat)?;
    let txt = bank.distances_text(txt_feat)?;
    Ok(spearman_slices(&img, &txt).unwrap_or(0.0))
}

/// Correlations for many feature pairs, computed in parallel; output order
/// matches input order.
pub fn correlations(bank: &BankSnapshot, img: &[&[f64]], txt: &[&[f64]]) -> Result<Vec<f64>> {
    img.par_iter()
        .zip(txt.par_iter())
        .map(|(i, t)| pair_correlation(bank, i, t))
        .collect()
}

pub fn soft_labels_for_batch(
    bank: &BankSnapshot,
    enc: &EncoderPair,
    batch: &[&RawPair],
) -> Result<SoftLabelSet> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let (img, txt) = enc.embed_batch(batch)?;
    let iv: Vec<&[f64]> = img.iter().map(|e| e.unit.as_slice()).collect();
    let tv: Vec<&[f64]> = txt.iter().map(|e| e.unit.as_slice()).collect();
    normalize_labels(&correlations(bank, &iv, &tv)?)
}
