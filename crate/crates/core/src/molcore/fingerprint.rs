//! Morgan-style circular fingerprints and Tanimoto similarity.

use std::hash::Hasher;

use fnv::FnvHasher;
use thiserror::Error;

use super::{rooted_code, MolGraph};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FingerprintError {
    #[error("fingerprint sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("cannot take the union of an empty molecule set")]
    EmptySet,
}

/// Sparse bit set over `[0, nbits)`, kept sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    bits: Vec<u32>,
    nbits: usize,
}

impl Fingerprint {
    pub fn from_bits(mut bits: Vec<u32>, nbits: usize) -> Self {
        assert!(nbits > 0, "nbits must be positive");
        assert!(
            bits.iter().all(|&b| (b as usize) < nbits),
            "bit index out of range"
        );
        bits.sort_unstable();
        bits.dedup();
        Self { bits, nbits }
    }

    pub fn empty(nbits: usize) -> Self {
        Self::from_bits(Vec::new(), nbits)
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn count(&self) -> usize {
        self.bits.len()
    }

    pub fn contains(&self, bit: u32) -> bool {
        self.bits.binary_search(&bit).is_ok()
    }

    /// Bitwise OR with another fingerprint of the same width.
    pub fn union(&self, other: &Fingerprint) -> Result<Fingerprint, FingerprintError> {
        if self.nbits != other.nbits {
            return Err(FingerprintError::SizeMismatch(self.nbits, other.nbits));
        }
        let mut out = Vec::with_capacity(self.bits.len() + other.bits.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.bits, &other.bits);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Ok(Fingerprint {
            bits: out,
            nbits: self.nbits,
        })
    }

    fn intersection_count(&self, other: &Fingerprint) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        let (a, b) = (&self.bits, &other.bits);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(data);
    h.finish()
}

/// Hashes the rooted code of every `r`-ball (`r` in `0..=radius`) around
/// every atom with FNV-1a 64 and folds it modulo `nbits`.
pub fn morgan_fingerprint(mol: &MolGraph, radius: usize, nbits: usize) -> Fingerprint {
    assert!(nbits >= 64, "nbits must be at least 64");
    let mut bits = Vec::with_capacity(mol.num_atoms() * (radius + 1));
    for atom in 0..mol.num_atoms() {
        for r in 0..=radius {
            let env = rooted_code(mol, atom, Some(r));
            bits.push((fnv1a64(env.as_bytes()) % nbits as u64) as u32);
        }
    }
    Fingerprint::from_bits(bits, nbits)
}

/// |a ∩ b| / |a ∪ b|, with two empty fingerprints defined as identical (1.0).
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.nbits != b.nbits {
        return Err(FingerprintError::SizeMismatch(a.nbits, b.nbits));
    }
    let inter = a.intersection_count(b);
    let union = a.bits.len() + b.bits.len() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

pub fn fingerprint_union<'a, I>(
    mols: I,
    radius: usize,
    nbits: usize,
) -> Result<Fingerprint, FingerprintError>
where
    I: IntoIterator<Item = &'a MolGraph>,
{
    let mut acc: Option<Fingerprint> = None;
    for m in mols {
        let fp = morgan_fingerprint(m, radius, nbits);
        acc = Some(match acc {
            None => fp,
            Some(prev) => prev.union(&fp)?,
        });
    }
    acc.ok_or(FingerprintError::EmptySet)
}
