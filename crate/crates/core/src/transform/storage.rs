//! Symbolic materialized storage (the `PA` sequences) and its grouping.

use serde::Serialize;
use thiserror::Error;

use crate::ir::{CondValue, Expr, FieldName, TupleId, TupleReservoir};

/// How the per-group lengths of the innermost sequence are made explicit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum LenMode {
    /// Every group is padded to the longest one.
    Padded,
    /// `PA_len[q] = len(PA[q])`.
    Compact,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum RecordSource {
    Field(FieldName),
    Data(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct RecordField {
    pub name: String,
    pub source: RecordSource,
}

/// One nesting level of a loop-dependent materialization: the enclosing
/// iterator and the tuple fields that must equal it.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub iterator: String,
    pub fields: Vec<FieldName>,
    pub lo: Expr,
    pub hi: Expr,
    /// Block size when the iterator is traversed in blocks.
    pub block: Option<u32>,
    /// Blocks run over the nonempty groups only.
    pub compressed: bool,
}

/// Storage plan for one materialized loop.
///
/// The nesting depth of `PA` is `levels.len() + 1`; the flags record which
/// materialized-form transformations have been applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterializedStorage {
    pub name: String,
    /// Reservoir whose tuples fill the leaves.
    pub source: String,
    /// Conditions that do not depend on an enclosing iterator.
    pub filter: Vec<(FieldName, CondValue)>,
    pub levels: Vec<Level>,
    pub record: Vec<RecordField>,
    pub len: Option<LenMode>,
    pub offsets: bool,
    pub perm: bool,
    pub position_major: bool,
    pub split: bool,
}

impl MaterializedStorage {
    pub fn padded(&self) -> bool {
        self.len == Some(LenMode::Padded)
    }

    pub fn is_flat(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn record_index(&self, field: &str) -> Option<usize> {
        self.record.iter().position(|r| r.name == field)
    }

    pub fn is_blocked(&self) -> bool {
        self.levels.iter().any(|l| l.block.is_some())
    }

    /// True when every level binds several fields to one iterator, i.e. the
    /// storage extracts a diagonal.
    pub fn is_diagonal(&self) -> bool {
        !self.levels.is_empty() && self.levels.iter().all(|l| l.fields.len() > 1)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StorageError {
    #[error("unknown field `{0}` in storage `{1}`")]
    UnknownField(FieldName, String),
    #[error("missing binding `{0}`")]
    MissingBinding(String),
    #[error("bad extent for level `{0}`: [{1}, {2})")]
    BadExtent(String, i64, i64),
    #[error("cannot evaluate expression: {0}")]
    Eval(String),
}

/// One materialized element: record values plus the input tuples it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafRecord {
    pub values: Vec<f64>,
    pub lineage: Vec<TupleId>,
}

/// Tuples of a storage distributed over its groups, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouped {
    /// `(lo, count)` per level.
    pub levels: Vec<(i64, usize)>,
    /// Row-major over levels; a flat storage has exactly one group.
    pub groups: Vec<Vec<LeafRecord>>,
    /// Groups in traversal order: the sort permutation or the identity.
    pub order: Vec<usize>,
    pub width: usize,
    /// Level-0 keys of the nonempty groups, ascending.
    pub nonempty: Vec<i64>,
}

impl Grouped {
    /// Distributes the tuples of `source` over the groups of `storage`.
    /// `eval` resolves filter values and level bounds.
    pub fn build(
        storage: &MaterializedStorage,
        source: &TupleReservoir,
        eval: &dyn Fn(&Expr) -> Result<i64, StorageError>,
    ) -> Result<Self, StorageError> {
        let field_idx = |f: &FieldName| {
            source
                .field_index(f)
                .ok_or_else(|| StorageError::UnknownField(f.clone(), storage.name.clone()))
        };

        let mut filters = Vec::new();
        for (f, v) in &storage.filter {
            let idx = field_idx(f)?;
            let bounds = match v {
                CondValue::Expr(e) => {
                    let x = eval(e)?;
                    (Some(x - 1), Some(x + 1))
                }
                CondValue::Interval { lo, hi } => {
                    (Some(eval(lo)?), hi.as_ref().map(eval).transpose()?)
                }
            };
            filters.push((idx, bounds));
        }

        let mut levels = Vec::new();
        let mut level_fields = Vec::new();
        for l in &storage.levels {
            let lo = eval(&l.lo)?;
            let hi = eval(&l.hi)?;
            if hi < lo {
                return Err(StorageError::BadExtent(l.iterator.clone(), lo, hi));
            }
            levels.push((lo, (hi - lo) as usize));
            level_fields.push(l.fields.iter().map(field_idx).collect::<Result<Vec<_>, _>>()?);
        }

        let mut columns = Vec::new();
        for r in &storage.record {
            columns.push(match &r.source {
                RecordSource::Field(f) => Column::Field(field_idx(f)?),
                RecordSource::Data(b) => Column::Data(
                    source
                        .binding(b)
                        .ok_or_else(|| StorageError::MissingBinding(b.clone()))?,
                ),
            });
        }

        let group_count = levels.iter().map(|(_, c)| *c).product::<usize>();
        let mut groups: Vec<Vec<LeafRecord>> = vec![Vec::new(); group_count];
        'tuples: for (n, t) in source.tuples().iter().enumerate() {
            for (idx, (lo, hi)) in &filters {
                let v = t[*idx];
                if lo.is_some_and(|lo| v <= lo) || hi.is_some_and(|hi| v >= hi) {
                    continue 'tuples;
                }
            }
            let mut g = 0usize;
            for ((lo, count), fields) in levels.iter().zip(&level_fields) {
                let key = t[fields[0]];
                if fields.iter().any(|&f| t[f] != key) {
                    continue 'tuples;
                }
                let off = key - lo;
                if off < 0 || off as usize >= *count {
                    continue 'tuples;
                }
                g = g * count + off as usize;
            }
            let values = columns
                .iter()
                .map(|c| match c {
                    Column::Field(i) => t[*i] as f64,
                    Column::Data(col) => col[n],
                })
                .collect();
            groups[g].push(LeafRecord {
                values,
                lineage: source.lineage(n).to_vec(),
            });
        }

        let lens: Vec<usize> = groups.iter().map(Vec::len).collect();
        let order = if storage.perm {
            sort_permutation(&lens)
        } else {
            (0..groups.len()).collect()
        };
        let width = lens.iter().copied().max().unwrap_or(0);
        let nonempty = match levels.first() {
            Some((lo, _)) if levels.len() == 1 => lens
                .iter()
                .enumerate()
                .filter(|(_, &l)| l > 0)
                .map(|(g, _)| lo + g as i64)
                .collect(),
            _ => Vec::new(),
        };
        Ok(Grouped {
            levels,
            groups,
            order,
            width,
            nonempty,
        })
    }

    /// Linear group index of a key, or `None` outside the level extents.
    pub fn group_index(&self, key: &[i64]) -> Option<usize> {
        let mut g = 0usize;
        for ((lo, count), k) in self.levels.iter().zip(key) {
            let off = k - lo;
            if off < 0 || off as usize >= *count {
                return None;
            }
            g = g * count + off as usize;
        }
        Some(g)
    }

    /// Key of the group with linear index `g`.
    pub fn group_key(&self, mut g: usize) -> Vec<i64> {
        let mut key = vec![0; self.levels.len()];
        for (slot, (lo, count)) in key.iter_mut().zip(&self.levels).rev() {
            *slot = lo + (g % count) as i64;
            g /= count;
        }
        key
    }

    pub fn lens(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}

enum Column<'a> {
    Field(usize),
    Data(&'a [f64]),
}

/// Permutation ordering groups by nonincreasing length; ties keep their
/// original relative order.
pub fn sort_permutation(lens: &[usize]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..lens.len()).collect();
    perm.sort_by(|&a, &b| lens[b].cmp(&lens[a]));
    perm
}
