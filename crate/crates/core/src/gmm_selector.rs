//! Clean/noisy sample selection with a two-component 1-D Gaussian mixture
//! fitted to per-sample warm-up losses.

use serde::Serialize;

use crate::dataset::RawPair;
use crate::encoders::{warmup_per_pair, EncoderPair};
use crate::error::{param, Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GmmParams {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GmmFit {
    pub params: GmmParams,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at the initial parameters followed by one value per EM step.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmSplit {
    pub posteriors: Vec<f64>,
    pub clean_ids: Vec<usize>,
    pub noisy_ids: Vec<usize>,
    pub threshold_p: f64,
}

/// Per-pair warm-up losses over the whole set, evaluated in consecutive
/// index-order batches. A trailing batch of one pair is folded into the
/// previous batch so every pair has negatives.
pub fn per_sample_losses(
    enc: &EncoderPair,
    pairs: &[RawPair],
    alpha: f64,
    batch_size: usize,
) -> Result<Vec<f64>> {
    if batch_size < 2 {
        return Err(param("batch_size", "must be at least 2"));
    }
    if pairs.len() < 2 {
        return Err(Error::InsufficientNegatives(pairs.len()));
    }
    let refs: Vec<&RawPair> = pairs.iter().collect();
    let mut bounds: Vec<(usize, usize)> = (0..refs.len())
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(refs.len())))
        .collect();
    if let [.., prev, last] = bounds.as_mut_slice() {
        if last.1 - last.0 < 2 {
            prev.1 = last.1;
            bounds.pop();
        }
    }
    let mut out = Vec::with_capacity(refs.len());
    for (s, e) in bounds {
        out.extend(warmup_per_pair(enc, &refs[s..e], alpha)?);
    }
    Ok(out)
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-sample component log-joints `ln β_t + ln N(x; m_t, v_t)`.
fn log_joints(params: &GmmParams, x: f64) -> [f64; 2] {
    [0, 1].map(|t| params.weights[t].ln() + log_normal_pdf(x, params.means[t], params.variances[t]))
}

pub fn log_likelihood(params: &GmmParams, xs: &[f64]) -> f64 {
    xs.iter()
        .map(|&x| {
            let [a, b] = log_joints(params, x);
            log_sum_exp(a, b)
        })
        .sum()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn initial_params(xs: &[f64]) -> Result<GmmParams> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted.first() == sorted.last() {
        return Err(Error::DegenerateFit(
            "need at least two distinct loss values".into(),
        ));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(VARIANCE_FLOOR);
    Ok(GmmParams {
        means: [percentile(&sorted, 0.1), percentile(&sorted, 0.9)],
        variances: [var, var],
        weights: [0.5, 0.5],
    })
}

fn em_step(params: &GmmParams, xs: &[f64]) -> GmmParams {
    let mut nk = [0.0; 2];
    let mut sx = [0.0; 2];
    let resp: Vec<[f64; 2]> = xs
        .iter()
        .map(|&x| {
            let [a, b] = log_joints(params, x);
            let z = log_sum_exp(a, b);
            [(a - z).exp(), (b - z).exp()]
        })
        .collect();
    for (r, &x) in resp.iter().zip(xs) {
        for t in 0..2 {
            nk[t] += r[t];
            sx[t] += r[t] * x;
        }
    }
    let mut next = *params;
    for t in 0..2 {
        if nk[t] <= 0.0 {
            // empty component keeps its previous location
            continue;
        }
        let m = sx[t] / nk[t];
        let v = resp
            .iter()
            .zip(xs)
            .map(|(r, &x)| r[t] * (x - m) * (x - m))
            .sum::<f64>()
            / nk[t];
        next.means[t] = m;
        next.variances[t] = v.max(VARIANCE_FLOOR);
    }
    let total = nk[0] + nk[1];
    next.weights = [nk[0] / total, nk[1] / total];
    next
}

/// EM from a deterministic percentile initialisation. Stops once the
/// log-likelihood gain drops below `tol` or after `max_iters` steps.
pub fn fit_gmm(losses: &[f64], max_iters: usize, tol: f64) -> Result<GmmFit> {
    let mut params = initial_params(losses)?;
    let mut ll = log_likelihood(&params, losses);
    let mut history = vec![ll];
    let mut iterations = 0;
    while iterations < max_iters {
        let next = em_step(&params, losses);
        let next_ll = log_likelihood(&next, losses);
        iterations += 1;
        history.push(next_ll);
        let gain = next_ll - ll;
        params = next;
        ll = next_ll;
        if gain < tol {
            break;
        }
    }
    Ok(GmmFit {
        params,
        iterations,
        log_likelihood: ll,
        history,
    })
}

/// Index of the component with the smaller mean.
pub fn clean_component(params: &GmmParams) -> usize {
    if params.means[1] < params.means[0] {
        1
    } else {
        0
    }
}

/// Posterior probability of the smaller-mean component for each loss.
pub fn clean_posterior(params: &GmmParams, losses: &[f64]) -> Vec<f64> {
    let k = clean_component(params);
    losses
        .iter()
        .map(|&x| {
            let j = log_joints(params, x);
            let z = log_sum_exp(j[0], j[1]);
            (j[k] - z).exp().clamp(0.0, 1.0)
        })
        .collect()
}

/// Strict split: clean iff `w_i > p`.
pub fn partition(posteriors: &[f64], p: f64) -> Result<GmmSplit> {
    if !(p > 0.0 && p < 1.0) {
        return Err(param("p", format!("{p} is outside (0, 1)")));
    }
    let (clean_ids, noisy_ids) = (0..posteriors.len()).partition(|&i| posteriors[i] > p);
    Ok(GmmSplit {
        posteriors: posteriors.to_vec(),
        clean_ids,
        noisy_ids,
        threshold_p: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorConfig {
    pub p: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Min-max normalize losses to `[0, 1]` before fitting.
    pub normalize: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            p: 0.5,
            max_iters: 100,
            tol: 1e-8,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub split: GmmSplit,
    /// `None` when the losses were degenerate and every pair was kept as clean.
    pub fit: Option<GmmFit>,
}

/// Fits the mixture to `losses` and splits at `cfg.p`. Degenerate loss sets
/// yield posterior 1 for every pair.
pub fn select(losses: &[f64], cfg: &SelectorConfig) -> Result<Selection> {
    let xs: Vec<f64> = if cfg.normalize {
        let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            losses.iter().map(|l| (l - lo) / (hi - lo)).collect()
        } else {
            losses.to_vec()
        }
    } else {
        losses.to_vec()
    };
    match fit_gmm(&xs, cfg.max_iters, cfg.tol) {
        Ok(fit) => {
            let w = clean_posterior(&fit.params, &xs);
            Ok(Selection {
                split: partition(&w, cfg.p)?,
                fit: Some(fit),
            })
        }
        Err(Error::DegenerateFit(reason)) => {
            log::warn!("mixture fit degenerate ({reason}); keeping every pair as clean");
            Ok(Selection {
                split: partition(&vec![1.0; losses.len()], cfg.p)?,
                fit: None,
            })
        }
        Err(e) => Err(e),
    }
}
