//! Synthetic two-modality pair datasets with injected correspondence noise.
//!
//! Each pair shares a latent vector `z ~ N(0, I)`; the image is `A·z + ε₁`
//! and the text `B·z + ε₂` for fixed seeded mixing matrices. Noise is injected
//! by cyclically shifting the texts of a random subset of training pairs, so
//! every corrupted pair ends up holding somebody else's caption.
//!
//! The last `n / 10` pairs are a held-out split that never receives noise.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::container::{Reader, Writer};
use crate::error::{param, Error, Result};

const MAGIC: &[u8; 4] = b"RPDS";

#[derive(Debug, Clone, PartialEq)]
pub struct RawPair {
    pub image_raw: Vec<f32>,
    pub text_raw: Vec<f32>,
    /// The label the training set claims for this pair; always 1.
    pub assumed_label: u8,
    pub pair_id: usize,
    true_match: bool,
}

impl RawPair {
    pub fn new(pair_id: usize, image_raw: Vec<f32>, text_raw: Vec<f32>, true_match: bool) -> Self {
        RawPair {
            image_raw,
            text_raw,
            assumed_label: 1,
            pair_id,
            true_match,
        }
    }

    /// Hidden ground truth. Only evaluation code may look at this.
    pub fn true_match(&self) -> bool {
        self.true_match
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<RawPair>,
    pub d_img: usize,
    pub d_txt: usize,
    pub noise_rate: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateParams {
    pub n: usize,
    pub d_latent: usize,
    pub d_img: usize,
    pub d_txt: usize,
    pub noise_rate: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        GenerateParams {
            n: 2000,
            d_latent: 16,
            d_img: 32,
            d_txt: 32,
            noise_rate: 0.4,
            sigma: 0.5,
            seed: 7,
        }
    }
}

/// Size of the clean held-out split at the tail of a dataset of `n` pairs.
pub fn heldout_len(n: usize) -> usize {
    n / 10
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v * scale
        })
        .collect()
}

fn mix(matrix: &[f64], rows: usize, z: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let cols = z.len();
    (0..rows)
        .map(|r| {
            let row = &matrix[r * cols..(r + 1) * cols];
            let signal: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
            let eps: f64 = StandardNormal.sample(rng);
            (signal + sigma * eps) as f32
        })
        .collect()
}

pub fn generate(p: &GenerateParams) -> Result<PairDataset> {
    if p.n < 1 {
        return Err(param("n", "must be at least 1"));
    }
    if p.d_latent == 0 || p.d_img == 0 || p.d_txt == 0 {
        return Err(param("d_latent", "dimensions must be positive"));
    }
    if p.d_latent > p.d_img.min(p.d_txt) {
        return Err(param("d_latent", "must not exceed min(d_img, d_txt)"));
    }
    if !(0.0..1.0).contains(&p.noise_rate) {
        return Err(param("noise_rate", format!("{} is outside [0, 1)", p.noise_rate)));
    }
    if !(p.sigma >= 0.0) || !p.sigma.is_finite() {
        return Err(param("sigma", "must be a finite value >= 0"));
    }
    let n_train = p.n - heldout_len(p.n);
    let n_noisy = (p.noise_rate * p.n as f64).round() as usize;
    if n_noisy > n_train {
        return Err(param(
            "noise_rate",
            format!("{n_noisy} noisy pairs do not fit in the {n_train} training pairs"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let scale = 1.0 / (p.d_latent as f64).sqrt();
    let a = gaussian_matrix(&mut rng, p.d_img, p.d_latent, scale);
    let b = gaussian_matrix(&mut rng, p.d_txt, p.d_latent, scale);

    let draw_latent = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..p.d_latent).map(|_| StandardNormal.sample(rng)).collect()
    };

    let mut pairs = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let z = draw_latent(&mut rng);
        let image = mix(&a, p.d_img, &z, p.sigma, &mut rng);
        let text = mix(&b, p.d_txt, &z, p.sigma, &mut rng);
        pairs.push(RawPair::new(i, image, text, true));
    }

    let mut noisy = index::sample(&mut rng, n_train, n_noisy).into_vec();
    noisy.sort_unstable();
    match noisy.len() {
        0 => {}
        1 => {
            // A one-element cycle is the identity, so draw an unrelated caption.
            let z = draw_latent(&mut rng);
            let i = noisy[0];
            pairs[i].text_raw = mix(&b, p.d_txt, &z, p.sigma, &mut rng);
            pairs[i].true_match = false;
        }
        c => {
            let originals: Vec<Vec<f32>> = noisy.iter().map(|&i| pairs[i].text_raw.clone()).collect();
            for (j, &i) in noisy.iter().enumerate() {
                pairs[i].text_raw = originals[(j + 1) % c].clone();
                pairs[i].true_match = false;
            }
        }
    }

    Ok(PairDataset {
        pairs,
        d_img: p.d_img,
        d_txt: p.d_txt,
        noise_rate: p.noise_rate as f32,
        seed: p.seed,
    })
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits into (training pairs, clean held-out pairs).
    pub fn split(&self) -> (&[RawPair], &[RawPair]) {
        let n_train = self.len() - heldout_len(self.len());
        self.pairs.split_at(n_train)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u32(self.len() as u32)
            .u32(self.d_img as u32)
            .u32(self.d_txt as u32)
            .f32(self.noise_rate)
            .u64(self.seed)
            .end_header();
        for pair in &self.pairs {
            w.f32s(&pair.image_raw).f32s(&pair.text_raw);
        }
        let truth: Vec<u8> = self.pairs.iter().map(|p| p.true_match as u8).collect();
        w.bytes(&truth);
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::open(data, MAGIC)?;
        let n = r.u32("n")? as usize;
        let d_img = r.u32("d_img")? as usize;
        let d_txt = r.u32("d_txt")? as usize;
        let noise_rate = r.f32("noise_rate")?;
        let seed = r.u64("seed")?;
        r.skip_to_payload();
        if d_img == 0 || d_txt == 0 {
            return Err(Error::Format {
                field: if d_img == 0 { "d_img" } else { "d_txt" },
                reason: "dimension must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&noise_rate) {
            return Err(Error::Format {
                field: "noise_rate",
                reason: format!("{noise_rate} is outside [0, 1)"),
            });
        }
        let mut raws = Vec::with_capacity(n);
        for _ in 0..n {
            let image = r.f32s(d_img, "records")?;
            let text = r.f32s(d_txt, "records")?;
            raws.push((image, text));
        }
        let truth = r.bytes(n, "ground_truth")?;
        r.expect_end()?;
        let pairs = raws
            .into_iter()
            .zip(truth)
            .enumerate()
            .map(|(i, ((image, text), &flag))| match flag {
                0 | 1 => Ok(RawPair::new(i, image, text, flag == 1)),
                other => Err(Error::Format {
                    field: "ground_truth",
                    reason: format!("flag {other} at pair {i} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairDataset {
            pairs,
            d_img,
            d_txt,
            noise_rate,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Debug export: one JSON object per pair.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            pair_id: usize,
            assumed_label: u8,
            true_match: bool,
            image_raw: &'a [f32],
            text_raw: &'a [f32],
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        for p in &self.pairs {
            let line = Line {
                pair_id: p.pair_id,
                assumed_label: p.assumed_label,
                true_match: p.true_match,
                image_raw: &p.image_raw,
                text_raw: &p.text_raw,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}
