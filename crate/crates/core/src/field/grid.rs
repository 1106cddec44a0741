//! Multi-resolution feature-grid geometry and the flat parameter layout.
//!
//! Levels grow geometrically from `base_res` to `max_res`. A level whose
//! vertex lattice fits in the table budget is stored densely (collision
//! free); finer levels hash their vertices into the table. All parameters
//! (every level's table followed by the two MLP heads) live in one flat
//! vector so finite differencing, optimizers and checkpoints can treat
//! the field as a plain parameter array.

use crate::error::{contract, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldCfg {
    pub levels: usize,
    pub feats_per_level: usize,
    pub base_res: usize,
    pub max_res: usize,
    pub table_size: usize,
    /// Width of both MLP heads' hidden layer.
    pub hidden: usize,
    /// Scene half-extent; the field lives in `[-bound, bound]^3`.
    pub bound: f64,
    /// Feed the ray direction to the color head.
    pub view_dependent: bool,
}

impl Default for FieldCfg {
    fn default() -> Self {
        Self {
            levels: 16,
            feats_per_level: 2,
            base_res: 16,
            max_res: 2048,
            table_size: 1 << 19,
            hidden: 32,
            bound: 1.0,
            view_dependent: false,
        }
    }
}

impl FieldCfg {
    /// Sixteen parameters total: a single 1-entry hashed level (2 features)
    /// plus width-1 heads. Used to finite-difference whole-pipeline
    /// gradients cheaply.
    pub fn micro() -> Self {
        Self {
            levels: 1,
            feats_per_level: 2,
            base_res: 2,
            max_res: 2,
            table_size: 1,
            hidden: 1,
            bound: 1.0,
            view_dependent: false,
        }
    }

    /// Desk-scale training configuration: enough capacity for blobby toy
    /// scenes at a fraction of the default's memory.
    pub fn small() -> Self {
        Self {
            levels: 8,
            feats_per_level: 2,
            base_res: 16,
            max_res: 256,
            table_size: 1 << 14,
            hidden: 32,
            bound: 1.0,
            view_dependent: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.feats_per_level == 0 || self.hidden == 0 {
            return Err(contract("field sizes must be positive"));
        }
        if self.base_res < 1 || self.max_res < self.base_res {
            return Err(contract("resolutions must satisfy 1 <= base <= max"));
        }
        if self.table_size == 0 {
            return Err(contract("table size must be positive"));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(contract("bound must be positive and finite"));
        }
        Ok(())
    }

    /// Grid resolution (cells per axis) of one level, geometric from base
    /// to max.
    pub fn level_res(&self, level: usize) -> usize {
        if self.levels == 1 || self.max_res == self.base_res {
            return self.base_res;
        }
        let growth = (self.max_res as f64 / self.base_res as f64).ln() / (self.levels - 1) as f64;
        // round, not floor: the last level must land exactly on max_res
        (self.base_res as f64 * (growth * level as f64).exp()).round() as usize
    }

    /// Encoding width: concatenated features of all levels.
    pub fn feature_dim(&self) -> usize {
        self.levels * self.feats_per_level
    }

    /// Color-head input width (encoding, plus the ray direction when
    /// view-dependent).
    pub fn color_in_dim(&self) -> usize {
        self.feature_dim() + if self.view_dependent { 3 } else { 0 }
    }
}

/// Half-open index range into the flat parameter vector.
pub type Span = (usize, usize);

fn span(cursor: &mut usize, len: usize) -> Span {
    let s = (*cursor, len);
    *cursor += len;
    s
}

/// Byte map of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub level_res: Vec<usize>,
    pub level_dense: Vec<bool>,
    /// Vertex entries per level (dense lattice size or the hash table size).
    pub level_entries: Vec<usize>,
    /// Parameter offset of each level's table.
    pub level_offset: Vec<usize>,
    /// Total table parameters (the head spans start here).
    pub tables: usize,
    pub w1: Span,
    pub b1: Span,
    pub w2: Span,
    pub b2: Span,
    pub v1: Span,
    pub c1: Span,
    pub v2: Span,
    pub c2: Span,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &FieldCfg) -> Self {
        let mut level_res = Vec::with_capacity(cfg.levels);
        let mut level_dense = Vec::with_capacity(cfg.levels);
        let mut level_entries = Vec::with_capacity(cfg.levels);
        let mut level_offset = Vec::with_capacity(cfg.levels);
        let mut cursor = 0usize;
        for l in 0..cfg.levels {
            let res = cfg.level_res(l);
            let lattice = (res + 1).pow(3);
            let dense = lattice <= cfg.table_size;
            let entries = if dense { lattice } else { cfg.table_size };
            level_res.push(res);
            level_dense.push(dense);
            level_entries.push(entries);
            level_offset.push(cursor);
            cursor += entries * cfg.feats_per_level;
        }
        let tables = cursor;
        let d = cfg.feature_dim();
        let dc = cfg.color_in_dim();
        let h = cfg.hidden;
        let w1 = span(&mut cursor, h * d);
        let b1 = span(&mut cursor, h);
        let w2 = span(&mut cursor, h);
        let b2 = span(&mut cursor, 1);
        let v1 = span(&mut cursor, h * dc);
        let c1 = span(&mut cursor, h);
        let v2 = span(&mut cursor, 3 * h);
        let c2 = span(&mut cursor, 3);
        Self {
            level_res,
            level_dense,
            level_entries,
            level_offset,
            tables,
            w1,
            b1,
            w2,
            b2,
            v1,
            c1,
            v2,
            c2,
            total: cursor,
        }
    }
}

/// Spatial hash of a lattice vertex (prime-multiplied coordinate XOR).
pub fn hash_vertex(x: usize, y: usize, z: usize, entries: usize) -> usize {
    let h = (x as u64)
        .wrapping_mul(1)
        ^ (y as u64).wrapping_mul(2_654_435_761)
        ^ (z as u64).wrapping_mul(805_459_861);
    (h % entries as u64) as usize
}

/// Entry index of vertex `(x, y, z)` on a level, dense or hashed.
pub fn vertex_entry(x: usize, y: usize, z: usize, res: usize, dense: bool, entries: usize) -> usize {
    if dense {
        (x * (res + 1) + y) * (res + 1) + z
    } else {
        hash_vertex(x, y, z, entries)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_levels_span_base_to_max_geometrically() {
        let cfg = FieldCfg::default();
        assert_eq!(cfg.level_res(0), 16);
        assert_eq!(cfg.level_res(15), 2048);
        for l in 1..16 {
            assert!(cfg.level_res(l) > cfg.level_res(l - 1));
        }
        let ratio = cfg.level_res(8) as f64 / cfg.level_res(7) as f64;
        let growth = (2048f64 / 16.0).powf(1.0 / 15.0);
        assert!((ratio - growth).abs() < 0.07, "ratio {ratio} vs {growth}");
    }

    #[test]
    fn coarse_levels_are_dense_and_fine_levels_hash() {
        let layout = Layout::new(&FieldCfg::default());
        assert!(layout.level_dense[0]);
        assert!(!layout.level_dense[15]);
        assert_eq!(layout.level_entries[0], 17 * 17 * 17);
        assert_eq!(layout.level_entries[15], 1 << 19);
        // offsets are cumulative and non-overlapping
        for l in 1..16 {
            assert_eq!(
                layout.level_offset[l],
                layout.level_offset[l - 1] + layout.level_entries[l - 1] * 2
            );
        }
    }

    #[test]
    fn micro_layout_has_sixteen_parameters() {
        let cfg = FieldCfg::micro();
        let layout = Layout::new(&cfg);
        assert_eq!(layout.total, 16);
        assert_eq!(layout.tables, 2);
    }

    #[test]
    fn spans_tile_the_parameter_vector() {
        for cfg in [FieldCfg::default(), FieldCfg::small(), FieldCfg::micro()] {
            let l = Layout::new(&cfg);
            let spans = [l.w1, l.b1, l.w2, l.b2, l.v1, l.c1, l.v2, l.c2];
            let mut cursor = l.tables;
            for (start, len) in spans {
                assert_eq!(start, cursor);
                cursor += len;
            }
            assert_eq!(cursor, l.total);
        }
    }

    #[test]
    fn dense_vertex_indices_are_unique() {
        let res = 4;
        let entries = (res + 1) * (res + 1) * (res + 1);
        let mut seen = vec![false; entries];
        for x in 0..=res {
            for y in 0..=res {
                for z in 0..=res {
                    let i = vertex_entry(x, y, z, res, true, entries);
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn hashed_indices_stay_in_range_and_spread() {
        let entries = 128;
        let mut hits = vec![0usize; entries];
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    hits[hash_vertex(x, y, z, entries)] += 1;
                }
            }
        }
        let used = hits.iter().filter(|&&h| h > 0).count();
        assert!(used > entries / 2, "only {used} of {entries} buckets used");
    }

    #[test]
    fn config_validation_rejects_degenerate_sizes() {
        let mut cfg = FieldCfg::default();
        cfg.levels = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = FieldCfg::default();
        cfg.max_res = 8;
        assert!(cfg.validate().is_err());
        let mut cfg = FieldCfg::default();
        cfg.bound = 0.0;
        assert!(cfg.validate().is_err());
        assert!(FieldCfg::default().validate().is_ok());
        assert!(FieldCfg::micro().validate().is_ok());
    }
}
