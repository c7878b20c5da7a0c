//! Linear image/text encoders onto the unit sphere, cosine similarity, and
//! the two hinge objectives used for training (all-negatives warm-up loss and
//! hard-negative soft-margin triplet loss) with exact analytic gradients.
//!
//! Gradients are computed in two stages. The loss functions over features
//! ([`warmup_on_features`], [`triplet_on_features`]) return the gradient with
//! respect to each unit embedding; [`EncoderPair::backprop`] then pushes that
//! through the normalization `u = Wx / ‖Wx‖`:
//!
//! ```text
//! ∂L/∂W = ((I − u uᵀ) ∂L/∂u / ‖Wx‖) xᵀ
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::container::{Reader, Writer};
use crate::dataset::RawPair;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RPEW";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v * scale
            })
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn apply(&self, x: &[f32]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(w, &v)| w * v as f64)
                    .sum()
            })
            .collect()
    }

    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// An L2-normalized embedding together with the pre-normalization norm that
/// the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub unit: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Image,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub w_img: Matrix,
    pub w_txt: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub w_img: Matrix,
    pub w_txt: Matrix,
}

impl Grads {
    pub fn zeros_like(enc: &EncoderPair) -> Self {
        Grads {
            w_img: Matrix::zeros(enc.w_img.rows, enc.w_img.cols),
            w_txt: Matrix::zeros(enc.w_txt.rows, enc.w_txt.cols),
        }
    }

    pub fn add_scaled(&mut self, other: &Grads, scale: f64) {
        self.w_img.add_scaled(&other.w_img, scale);
        self.w_txt.add_scaled(&other.w_txt, scale);
    }

    pub fn get(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Image => &self.w_img,
            Modality::Text => &self.w_txt,
        }
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity of two unit vectors.
pub fn similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    Ok(dot(u, v))
}

impl EncoderPair {
    pub fn new<R: Rng + ?Sized>(d: usize, d_img: usize, d_txt: usize, rng: &mut R) -> Self {
        EncoderPair {
            w_img: Matrix::random(d, d_img, rng),
            w_txt: Matrix::random(d, d_txt, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_img.rows
    }

    pub fn weights(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Image => &self.w_img,
            Modality::Text => &self.w_txt,
        }
    }

    pub fn embed(&self, m: Modality, x: &[f32]) -> Result<Embedding> {
        let w = self.weights(m);
        if x.len() != w.cols {
            return Err(Error::DimensionMismatch {
                expected: w.cols,
                got: x.len(),
            });
        }
        let mut proj = w.apply(x);
        let norm = dot(&proj, &proj).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateInput(format!(
                "{m:?} projection has norm {norm}"
            )));
        }
        proj.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding { unit: proj, norm })
    }

    pub fn embed_image(&self, x: &[f32]) -> Result<Embedding> {
        self.embed(Modality::Image, x)
    }

    pub fn embed_text(&self, x: &[f32]) -> Result<Embedding> {
        self.embed(Modality::Text, x)
    }

    /// Embeds both sides of every pair in the batch.
    pub fn embed_batch(&self, batch: &[&RawPair]) -> Result<(Vec<Embedding>, Vec<Embedding>)> {
        let img = batch
            .iter()
            .map(|p| self.embed_image(&p.image_raw))
            .collect::<Result<Vec<_>>>()?;
        let txt = batch
            .iter()
            .map(|p| self.embed_text(&p.text_raw))
            .collect::<Result<Vec<_>>>()?;
        Ok((img, txt))
    }

    /// Accumulates `∂L/∂W` into `grad` given `∂L/∂u` for one embedding.
    pub fn backprop(grad: &mut Matrix, emb: &Embedding, x: &[f32], d_unit: &[f64]) {
        let radial = dot(&emb.unit, d_unit);
        for r in 0..grad.rows {
            let g = (d_unit[r] - radial * emb.unit[r]) / emb.norm;
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.data[r * grad.cols..(r + 1) * grad.cols];
            for (w, &v) in row.iter_mut().zip(x) {
                *w += g * v as f64;
            }
        }
    }

    /// `W ← W − lr·grad` on both matrices.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) {
        self.w_img.add_scaled(&grads.w_img, -lr);
        self.w_txt.add_scaled(&grads.w_txt, -lr);
    }

    /// Order-sensitive hash of the exact weight bits.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the raw bit patterns
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.w_img.data.iter().chain(&self.w_txt.data) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u32(self.dim() as u32)
            .u32(self.w_img.cols as u32)
            .u32(self.w_txt.cols as u32)
            .end_header();
        w.f64s_as_f32(&self.w_img.data).f64s_as_f32(&self.w_txt.data);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::open(data, MAGIC)?;
        let d = r.u32("d")? as usize;
        let d_img = r.u32("d_img")? as usize;
        let d_txt = r.u32("d_txt")? as usize;
        r.skip_to_payload();
        let to_matrix = |rows, cols, v: Vec<f32>| Matrix {
            rows,
            cols,
            data: v.into_iter().map(f64::from).collect(),
        };
        let w_img = to_matrix(d, d_img, r.f32s(d * d_img, "w_img")?);
        let w_txt = to_matrix(d, d_txt, r.f32s(d * d_txt, "w_txt")?);
        r.expect_end()?;
        Ok(EncoderPair { w_img, w_txt })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Plain SGD with optional heavy-ball momentum (`momentum = 0` is exactly
/// [`EncoderPair::sgd_step`]).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    velocity: Option<Grads>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, enc: &mut EncoderPair, grads: &Grads, lr: f64) {
        if self.momentum == 0.0 {
            enc.sgd_step(grads, lr);
            return;
        }
        let v = self.velocity.get_or_insert_with(|| Grads::zeros_like(enc));
        for (vv, g) in v
            .w_img
            .data
            .iter_mut()
            .chain(v.w_txt.data.iter_mut())
            .zip(grads.w_img.data.iter().chain(&grads.w_txt.data))
        {
            *vv = self.momentum * *vv + g;
        }
        enc.sgd_step(v, lr);
    }
}

/// Loss value plus per-pair contributions and gradients w.r.t. each unit
/// embedding.
#[derive(Debug, Clone)]
pub struct FeatureLoss {
    pub loss: f64,
    pub per_pair: Vec<f64>,
    pub d_img: Vec<Vec<f64>>,
    pub d_txt: Vec<Vec<f64>>,
}

fn sim_matrix(img: &[&[f64]], txt: &[&[f64]]) -> Vec<Vec<f64>> {
    img.iter()
        .map(|u| txt.iter().map(|v| dot(u, v)).collect())
        .collect()
}

fn check_batch(img: &[&[f64]], txt: &[&[f64]]) -> Result<usize> {
    if img.len() != txt.len() {
        return Err(Error::DimensionMismatch {
            expected: img.len(),
            got: txt.len(),
        });
    }
    if img.len() < 2 {
        return Err(Error::InsufficientNegatives(img.len()));
    }
    Ok(img.len())
}

fn accumulate(d: &mut [f64], v: &[f64], scale: f64) {
    for (a, b) in d.iter_mut().zip(v) {
        *a += scale * b;
    }
}

/// All-negatives warm-up loss: for each pair the hinge terms against every
/// other in-batch text and image, summed and divided by `B − 1`; the batch
/// loss is the mean over pairs.
pub fn warmup_on_features(img: &[&[f64]], txt: &[&[f64]], alpha: f64) -> Result<FeatureLoss> {
    let b = check_batch(img, txt)?;
    let dim = img[0].len();
    let s = sim_matrix(img, txt);
    let neg = (b - 1) as f64;
    let scale = 1.0 / (b as f64 * neg);
    let mut per_pair = vec![0.0; b];
    let mut d_img = vec![vec![0.0; dim]; b];
    let mut d_txt = vec![vec![0.0; dim]; b];
    for i in 0..b {
        let pos = s[i][i];
        let mut total = 0.0;
        for j in (0..b).filter(|&j| j != i) {
            // image i against negative text j
            let h = alpha - pos + s[i][j];
            if h > 0.0 {
                total += h;
                accumulate(&mut d_img[i], txt[j], scale);
                accumulate(&mut d_txt[j], img[i], scale);
                accumulate(&mut d_img[i], txt[i], -scale);
                accumulate(&mut d_txt[i], img[i], -scale);
            }
            // negative image j against text i
            let h = alpha - pos + s[j][i];
            if h > 0.0 {
                total += h;
                accumulate(&mut d_img[j], txt[i], scale);
                accumulate(&mut d_txt[i], img[j], scale);
                accumulate(&mut d_img[i], txt[i], -scale);
                accumulate(&mut d_txt[i], img[i], -scale);
            }
        }
        per_pair[i] = total / neg;
    }
    let loss = per_pair.iter().sum::<f64>() / b as f64;
    Ok(FeatureLoss {
        loss,
        per_pair,
        d_img,
        d_txt,
    })
}

/// Index of the largest `scores[j]` for `j != skip`; ties go to the lower index.
pub(crate) fn argmax_excluding(scores: impl Iterator<Item = f64>, skip: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (j, v) in scores.enumerate() {
        if j != skip && (best == usize::MAX || v > best_val) {
            best = j;
            best_val = v;
        }
    }
    best
}

/// Hard-negative triplet loss with per-pair margins, averaged over the batch.
pub fn triplet_on_features(img: &[&[f64]], txt: &[&[f64]], margins: &[f64]) -> Result<FeatureLoss> {
    let b = check_batch(img, txt)?;
    if margins.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: margins.len(),
        });
    }
    let dim = img[0].len();
    let s = sim_matrix(img, txt);
    let scale = 1.0 / b as f64;
    let mut per_pair = vec![0.0; b];
    let mut d_img = vec![vec![0.0; dim]; b];
    let mut d_txt = vec![vec![0.0; dim]; b];
    for i in 0..b {
        let pos = s[i][i];
        let hard_txt = argmax_excluding(s[i].iter().copied(), i);
        let hard_img = argmax_excluding(s.iter().map(|row| row[i]), i);
        let h1 = margins[i] - pos + s[i][hard_txt];
        if h1 > 0.0 {
            per_pair[i] += h1;
            accumulate(&mut d_img[i], txt[hard_txt], scale);
            accumulate(&mut d_txt[hard_txt], img[i], scale);
            accumulate(&mut d_img[i], txt[i], -scale);
            accumulate(&mut d_txt[i], img[i], -scale);
        }
        let h2 = margins[i] - pos + s[hard_img][i];
        if h2 > 0.0 {
            per_pair[i] += h2;
            accumulate(&mut d_img[hard_img], txt[i], scale);
            accumulate(&mut d_txt[i], img[hard_img], scale);
            accumulate(&mut d_img[i], txt[i], -scale);
            accumulate(&mut d_txt[i], img[i], -scale);
        }
    }
    let loss = per_pair.iter().sum::<f64>() / b as f64;
    Ok(FeatureLoss {
        loss,
        per_pair,
        d_img,
        d_txt,
    })
}

fn units(embs: &[Embedding]) -> Vec<&[f64]> {
    embs.iter().map(|e| e.unit.as_slice()).collect()
}

/// Pushes feature-level gradients for a batch of raw pairs into weight gradients.
pub fn backprop_batch(
    enc: &EncoderPair,
    batch: &[&RawPair],
    img: &[Embedding],
    txt: &[Embedding],
    fl: &FeatureLoss,
) -> Grads {
    let mut grads = Grads::zeros_like(enc);
    for (k, pair) in batch.iter().enumerate() {
        EncoderPair::backprop(&mut grads.w_img, &img[k], &pair.image_raw, &fl.d_img[k]);
        EncoderPair::backprop(&mut grads.w_txt, &txt[k], &pair.text_raw, &fl.d_txt[k]);
    }
    grads
}

pub fn warmup_loss_and_grad(enc: &EncoderPair, batch: &[&RawPair], alpha: f64) -> Result<(f64, Grads)> {
    if batch.len() < 2 {
        return Err(Error::InsufficientNegatives(batch.len()));
    }
    let (img, txt) = enc.embed_batch(batch)?;
    let fl = warmup_on_features(&units(&img), &units(&txt), alpha)?;
    let grads = backprop_batch(enc, batch, &img, &txt, &fl);
    Ok((fl.loss, grads))
}

/// Per-pair warm-up losses for one batch (the values the mixture model fits).
pub fn warmup_per_pair(enc: &EncoderPair, batch: &[&RawPair], alpha: f64) -> Result<Vec<f64>> {
    let (img, txt) = enc.embed_batch(batch)?;
    Ok(warmup_on_features(&units(&img), &units(&txt), alpha)?.per_pair)
}

pub fn triplet_loss_and_grad(
    enc: &EncoderPair,
    batch: &[&RawPair],
    margins: &[f64],
) -> Result<(f64, Grads)> {
    if batch.len() < 2 {
        return Err(Error::InsufficientNegatives(batch.len()));
    }
    let (img, txt) = enc.embed_batch(batch)?;
    let fl = triplet_on_features(&units(&img), &units(&txt), margins)?;
    let grads = backprop_batch(enc, batch, &img, &txt, &fl);
    Ok((fl.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn identity_encoder_normalizes_known_vector() {
        let enc = EncoderPair {
            w_img: Matrix::identity(4),
            w_txt: Matrix::identity(4),
        };
        let e = enc.embed_image(&[3.0, 4.0, 0.0, 0.0]).unwrap();
        assert!(close(e.unit[0], 0.6, 1e-12));
        assert!(close(e.unit[1], 0.8, 1e-12));
        assert_eq!(e.unit[2], 0.0);
    }

    #[test]
    fn embeddings_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = EncoderPair::new(8, 12, 10, &mut rng);
        for _ in 0..20 {
            let x: Vec<f32> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let e = enc.embed_image(&x).unwrap();
            assert!(close(dot(&e.unit, &e.unit).sqrt(), 1.0, 1e-9));
        }
    }

    #[test]
    fn zero_input_is_degenerate() {
        let enc = EncoderPair {
            w_img: Matrix::identity(3),
            w_txt: Matrix::identity(3),
        };
        assert!(matches!(enc.embed_text(&[0.0; 3]), Err(Error::DegenerateInput(_))));
        assert!(matches!(
            enc.embed_text(&[1.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn similarity_examples() {
        let e1 = [1.0, 0.0];
        let neg = [-1.0, 0.0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(similarity(&e1, &e1).unwrap(), 1.0);
        assert_eq!(similarity(&e1, &neg).unwrap(), -1.0);
        assert!(close(similarity(&e1, &[h, h]).unwrap(), 0.7071, 1e-4));
        assert!(similarity(&e1, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn warmup_loss_zero_when_separated() {
        // positives at +1, negatives at -1
        let a = [1.0, 0.0];
        let b = [-1.0, 0.0];
        let img: Vec<&[f64]> = vec![&a, &b];
        let txt: Vec<&[f64]> = vec![&a, &b];
        let fl = warmup_on_features(&img, &txt, 0.2).unwrap();
        assert_eq!(fl.loss, 0.0);
    }

    #[test]
    fn warmup_loss_identical_embeddings() {
        let a = [0.0, 1.0];
        let img: Vec<&[f64]> = vec![&a, &a];
        let txt: Vec<&[f64]> = vec![&a, &a];
        let fl = warmup_on_features(&img, &txt, 0.2).unwrap();
        assert!(close(fl.loss, 0.4, 1e-15));
        assert!(fl.per_pair.iter().all(|&l| close(l, 0.4, 1e-15)));
    }

    #[test]
    fn single_pair_batch_is_rejected() {
        let a = [1.0];
        let img: Vec<&[f64]> = vec![&a];
        assert!(matches!(
            warmup_on_features(&img, &img, 0.2),
            Err(Error::InsufficientNegatives(1))
        ));
        assert!(matches!(
            triplet_on_features(&img, &img, &[0.2]),
            Err(Error::InsufficientNegatives(1))
        ));
    }

    /// Builds unit vectors in 3-D with prescribed pairwise similarities for a
    /// single anchor: img_0 = e1, txt_0 at cos = pos, txt_1 at cos = neg_t,
    /// and img_1 chosen so S(img_1, txt_0) = neg_i.
    fn three_way(pos: f64, neg_t: f64, neg_i: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let unit = |c: f64| vec![c, (1.0 - c * c).sqrt(), 0.0];
        let img0 = vec![1.0, 0.0, 0.0];
        let txt0 = unit(pos);
        let txt1 = unit(neg_t);
        // img1 = (neg_i / pos-part) projected: pick img1 in the plane of txt0
        let t0 = &txt0;
        let perp = vec![-t0[1], t0[0], 0.0];
        let img1: Vec<f64> = t0
            .iter()
            .zip(&perp)
            .map(|(a, b)| neg_i * a + (1.0 - neg_i * neg_i).sqrt() * b)
            .collect();
        (vec![img0, img1], vec![txt0, txt1])
    }

    #[test]
    fn triplet_hand_cases() {
        let (img, txt) = three_way(0.8, 0.3, 0.5);
        let iv: Vec<&[f64]> = img.iter().map(|v| v.as_slice()).collect();
        let tv: Vec<&[f64]> = txt.iter().map(|v| v.as_slice()).collect();
        let fl = triplet_on_features(&iv, &tv, &[0.2, 0.2]).unwrap();
        assert!(close(fl.per_pair[0], 0.0, 1e-12));

        let (img, txt) = three_way(0.4, 0.5, 0.3);
        let iv: Vec<&[f64]> = img.iter().map(|v| v.as_slice()).collect();
        let tv: Vec<&[f64]> = txt.iter().map(|v| v.as_slice()).collect();
        let fl = triplet_on_features(&iv, &tv, &[0.2, 0.2]).unwrap();
        assert!(close(fl.per_pair[0], 0.4, 1e-12), "{}", fl.per_pair[0]);
    }

    #[test]
    fn zero_margin_ordered_batch_has_zero_loss() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let img: Vec<&[f64]> = vec![&a, &b];
        let txt: Vec<&[f64]> = vec![&a, &b];
        assert_eq!(triplet_on_features(&img, &txt, &[0.0, 0.0]).unwrap().loss, 0.0);
    }

    #[test]
    fn sgd_step_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderPair::new(3, 4, 5, &mut rng);
        let zero = Grads::zeros_like(&enc);
        let mut a = enc.clone();
        a.sgd_step(&zero, 0.1);
        assert_eq!(a, enc);

        let mut g = Grads::zeros_like(&enc);
        g.w_img.data[0] = 2.0;
        let mut b = enc.clone();
        b.sgd_step(&g, 0.0);
        assert_eq!(b, enc);
        b.sgd_step(&g, 0.1);
        assert!(close(b.w_img.get(0, 0), enc.w_img.get(0, 0) - 0.2, 1e-15));
        assert_eq!(b.w_txt, enc.w_txt);
    }

    #[test]
    fn momentum_zero_matches_plain_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = EncoderPair::new(3, 4, 5, &mut rng);
        let mut g = Grads::zeros_like(&enc);
        g.w_txt.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut a = enc.clone();
        let mut b = enc.clone();
        a.sgd_step(&g, 0.05);
        Sgd::new(0.0).step(&mut b, &g, 0.05);
        assert_eq!(a, b);
    }

    #[test]
    fn weights_round_trip_through_f32_container() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = EncoderPair::new(3, 4, 5, &mut rng);
        let back = EncoderPair::from_bytes(&enc.to_bytes()).unwrap();
        for (a, b) in enc.w_img.data.iter().zip(&back.w_img.data) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(back.w_txt.cols, 5);
    }
}
