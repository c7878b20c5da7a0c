//! Fixed-capacity FIFO store of matched (image, text) feature tuples.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use crate::container::{Reader, Writer};
use crate::error::{param, Error, Result};

const MAGIC: &[u8; 4] = b"RPMB";

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(Vec<f32>, Vec<f32>)>,
    insertion_counter: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(param("bank_size", "must be at least 1"));
        }
        Ok(MemoryBank {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
            insertion_counter: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insertion_counter(&self) -> u64 {
        self.insertion_counter
    }

    /// Appends a tuple, evicting the oldest one when full.
    pub fn push(&mut self, img_feat: &[f64], txt_feat: &[f64]) -> Result<()> {
        for v in [img_feat, txt_feat] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: v.len(),
                });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        self.entries.push_back((to32(img_feat), to32(txt_feat)));
        self.insertion_counter += 1;
        Ok(())
    }

    pub fn snapshot(&self) -> BankSnapshot {
        let to64 = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();
        let (img, txt) = self
            .entries
            .iter()
            .map(|(i, t)| (to64(i), to64(t)))
            .unzip();
        BankSnapshot { img, txt }
    }

    pub fn distances_image(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.snapshot().distances_image(query)
    }

    pub fn distances_text(&self, query: &[f64]) -> Result<Vec<f64>> {
        self.snapshot().distances_text(query)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC);
        w.u32(self.capacity as u32)
            .u32(self.len() as u32)
            .u32(self.dim as u32)
            .u64(self.insertion_counter)
            .end_header();
        for (i, t) in &self.entries {
            w.f32s(i).f32s(t);
        }
        w.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::open(data, MAGIC)?;
        let capacity = r.u32("capacity")? as usize;
        let len = r.u32("len")? as usize;
        let dim = r.u32("dim")? as usize;
        let insertion_counter = r.u64("insertion_counter")?;
        r.skip_to_payload();
        if capacity == 0 || len > capacity {
            return Err(Error::Format {
                field: "len",
                reason: format!("{len} entries in a bank of capacity {capacity}"),
            });
        }
        let mut entries = VecDeque::with_capacity(capacity);
        for _ in 0..len {
            let i = r.f32s(dim, "entries")?;
            let t = r.f32s(dim, "entries")?;
            entries.push_back((i, t));
        }
        r.expect_end()?;
        Ok(MemoryBank {
            capacity,
            dim,
            entries,
            insertion_counter,
        })
    }

    pub fn dump(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Immutable, order-preserving copy of the bank contents, widened to `f64`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankSnapshot {
    pub img: Vec<Vec<f64>>,
    pub txt: Vec<Vec<f64>>,
}

impl BankSnapshot {
    pub fn len(&self) -> usize {
        self.img.len()
    }

    pub fn is_empty(&self) -> bool {
        self.img.is_empty()
    }

    fn distances(stored: &[Vec<f64>], query: &[f64]) -> Result<Vec<f64>> {
        let first = stored.first().ok_or(Error::EmptyBank)?;
        if first.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                got: query.len(),
            });
        }
        Ok(stored.iter().map(|s| euclidean(query, s)).collect())
    }

    /// Euclidean distances from an image feature to every stored image feature.
    pub fn distances_image(&self, query: &[f64]) -> Result<Vec<f64>> {
        Self::distances(&self.img, query)
    }

    /// Euclidean distances from a text feature to every stored text feature.
    pub fn distances_text(&self, query: &[f64]) -> Result<Vec<f64>> {
        Self::distances(&self.txt, query)
    }
}
