//! The per-user matching problem: `sum_h cos(d^h, C^h y)` over the included
//! dimensions.
//!
//! Only rows of `C^h` that some candidate actually holds can influence the
//! objective, so each dimension is stored with its rows compacted to that
//! support. A dimension whose preference is all zeros is excluded outright.
//! A dimension whose matrix has no entries stays included (its cosine is
//! always 0) but is marked inert: it cannot take part in the parameter
//! iteration because `||C^h y||` is identically zero.

use crate::error::{Error, Result};
use crate::model::{normalize_preference, CandidateProfileMatrix, DiversityPreference};

/// One included dimension with rows restricted to the candidates' support.
#[derive(Clone, Debug)]
pub struct DimensionBlock {
    pub dimension: usize,
    /// Unit preference `d̄^h` at the compact rows.
    unit_pref: Vec<f64>,
    col_ptr: Vec<usize>,
    /// Compact row index, per column.
    row_idx: Vec<u32>,
}

impl DimensionBlock {
    fn new(pref: &DiversityPreference, matrix: &CandidateProfileMatrix) -> Result<Self> {
        let full = normalize_preference(pref)?;
        let (_, m) = matrix.shape();
        let mut compact_of = vec![u32::MAX; full.len()];
        let mut unit_pref = Vec::new();
        let mut col_ptr = Vec::with_capacity(m + 1);
        let mut row_idx = Vec::with_capacity(matrix.nnz());
        col_ptr.push(0);
        for q in 0..m {
            for &z in matrix.column(q) {
                let slot = &mut compact_of[z as usize];
                if *slot == u32::MAX {
                    *slot = unit_pref.len() as u32;
                    unit_pref.push(full[z as usize]);
                }
                row_idx.push(*slot);
            }
            col_ptr.push(row_idx.len());
        }
        Ok(DimensionBlock {
            dimension: pref.dimension,
            unit_pref,
            col_ptr,
            row_idx,
        })
    }

    pub fn rows(&self) -> usize {
        self.unit_pref.len()
    }

    pub fn unit_pref(&self) -> &[f64] {
        &self.unit_pref
    }

    pub fn is_inert(&self) -> bool {
        self.row_idx.is_empty()
    }

    pub fn column(&self, q: usize) -> &[u32] {
        &self.row_idx[self.col_ptr[q]..self.col_ptr[q + 1]]
    }

    /// Writes `C^h y` (compact rows) into `out`.
    pub fn apply(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.rows(), 0.0);
        for (q, &yq) in y.iter().enumerate() {
            if yq != 0.0 {
                for &z in self.column(q) {
                    out[z as usize] += yq;
                }
            }
        }
    }

    /// `(d̄^T C y, ||C y||)`, using `scratch` for `C y`.
    pub fn dot_norm(&self, y: &[f64], scratch: &mut Vec<f64>) -> (f64, f64) {
        self.apply(y, scratch);
        let dot = scratch
            .iter()
            .zip(&self.unit_pref)
            .map(|(r, d)| r * d)
            .sum::<f64>();
        let norm = scratch.iter().map(|r| r * r).sum::<f64>().sqrt();
        (dot, norm)
    }

    /// `C^T v` accumulated into `out` (length m), scaled by `scale`.
    pub fn add_transpose(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        for (q, slot) in out.iter_mut().enumerate() {
            let s: f64 = self.column(q).iter().map(|&z| v[z as usize]).sum();
            *slot += scale * s;
        }
    }
}

/// A user's matching problem over `m` candidates.
#[derive(Clone, Debug)]
pub struct MatchingProblem {
    m: usize,
    total_dimensions: usize,
    blocks: Vec<DimensionBlock>,
    excluded: Vec<usize>,
}

impl MatchingProblem {
    /// `prefs[i]` and `matrices[i]` must describe the same dimension.
    pub fn new(prefs: &[DiversityPreference], matrices: &[CandidateProfileMatrix]) -> Result<Self> {
        if prefs.len() != matrices.len() {
            return Err(Error::LengthMismatch {
                expected: prefs.len(),
                actual: matrices.len(),
            });
        }
        let m = matrices.first().map_or(0, |c| c.shape().1);
        let mut blocks = Vec::new();
        let mut excluded = Vec::new();
        for (pref, matrix) in prefs.iter().zip(matrices) {
            let (rows, cols) = matrix.shape();
            if pref.dimension != matrix.dimension {
                return Err(Error::InvalidParameter(format!(
                    "preference dimension {} paired with matrix dimension {}",
                    pref.dimension, matrix.dimension
                )));
            }
            if pref.counts.len() != rows {
                return Err(Error::LengthMismatch {
                    expected: rows,
                    actual: pref.counts.len(),
                });
            }
            if cols != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    actual: cols,
                });
            }
            if pref.is_zero() {
                excluded.push(pref.dimension);
            } else {
                blocks.push(DimensionBlock::new(pref, matrix)?);
            }
        }
        if blocks.is_empty() {
            return Err(Error::NoIncludedDimensions);
        }
        Ok(MatchingProblem {
            m,
            total_dimensions: prefs.len(),
            blocks,
            excluded,
        })
    }

    pub fn candidate_count(&self) -> usize {
        self.m
    }

    pub fn total_dimensions(&self) -> usize {
        self.total_dimensions
    }

    /// Number of dimensions with a nonzero preference.
    pub fn h_effective(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DimensionBlock] {
        &self.blocks
    }

    /// Included dimensions whose matrix is not empty.
    pub fn active_blocks(&self) -> impl Iterator<Item = &DimensionBlock> {
        self.blocks.iter().filter(|b| !b.is_inert())
    }

    pub fn active_dimensions(&self) -> Vec<usize> {
        self.active_blocks().map(|b| b.dimension).collect()
    }

    pub fn inert_dimensions(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.is_inert())
            .map(|b| b.dimension)
            .collect()
    }

    /// Dimensions dropped because the preference is all zeros.
    pub fn excluded_dimensions(&self) -> &[usize] {
        &self.excluded
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::LengthMismatch {
                expected: self.m,
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Per-block cosine; a zero `C^h y` contributes 0.
    pub fn cosines(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut scratch = Vec::new();
        Ok(self
            .blocks
            .iter()
            .map(|b| {
                let (dot, norm) = b.dot_norm(y, &mut scratch);
                if norm > 0.0 {
                    dot / norm
                } else {
                    0.0
                }
            })
            .collect())
    }

    /// `sum_h cos(d^h, C^h y)` over included dimensions; lies in `[0, H_eff]`.
    pub fn objective(&self, y: &[f64]) -> Result<f64> {
        Ok(self.cosines(y)?.iter().sum())
    }

    /// Objective of the binary decision selecting `indices`.
    pub fn objective_of_selection(&self, indices: &[usize]) -> Result<f64> {
        self.objective(&self.indicator(indices)?)
    }

    pub fn indicator(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.m];
        for &i in indices {
            if i >= self.m {
                return Err(Error::InvalidParameter(format!(
                    "candidate index {i} out of range for m = {}",
                    self.m
                )));
            }
            y[i] = 1.0;
        }
        Ok(y)
    }
}

/// Problem (1)'s objective from raw preferences and matrices.
pub fn dpa_objective(
    prefs: &[DiversityPreference],
    matrices: &[CandidateProfileMatrix],
    y: &[f64],
) -> Result<f64> {
    MatchingProblem::new(prefs, matrices)?.objective(y)
}
