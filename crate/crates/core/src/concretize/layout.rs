//! Physical layout of materialized storages: the descriptor (shape) and
//! the filled instance.
//!
//! With `G` groups of at most `W` leaves, leaves are placed as follows,
//! where `q` is the group's position in traversal order:
//!
//! * offsets, group-major: back to back, `PA_ptr[G + 1]`;
//! * offsets, position-major: position by position, `PA_ptr[W + 1]`;
//! * compact, group-major: `q * W + k`, with `PA_len[G]`;
//! * compact, position-major: `k * G + j` for the j-th group having a leaf
//!   at position k, with `PA_len[W]`;
//! * padded: `k * G + q`, i.e. column-major.
//!
//! Position-major storages without a permutation also record the group key
//! of every leaf slot in `PA_idx`.

use std::collections::BTreeMap;

use serde::Serialize;

use super::ConcretizeError;
use crate::ir::{StaticEnv, TupleReservoir};
use crate::transform::{Grouped, LeafRecord, LenMode, MaterializedStorage, RecordSource, StorageError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Value,
    ColumnIndex,
    RowIndex,
    FieldIndex,
    Record,
    Length,
    Offset,
    Permutation,
    GroupKey,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    RowMajor,
    ColumnMajor,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ComponentDesc {
    pub name: String,
    pub kind: ComponentKind,
    /// Symbolic extents, such as `PA_G`, `PA_W` or `PA_G+1`.
    pub extents: Vec<String>,
    pub layout: Option<Layout>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct BlockGeometry {
    pub x: u32,
    pub y: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Traversal {
    GroupMajor,
    PositionMajor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lengths {
    Symbolic,
    Compact,
    Padded,
    Offsets,
}

/// Summary of one storage plan, enough to name its format.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct StorageShape {
    pub name: String,
    /// Tuple fields keyed by each level.
    pub grouped_by: Vec<Vec<String>>,
    pub record: Vec<String>,
    pub traversal: Traversal,
    pub lengths: Lengths,
    pub perm: bool,
    pub split: bool,
    pub diagonal: bool,
    pub blocks: Vec<Option<u32>>,
}

impl StorageShape {
    pub fn of(st: &MaterializedStorage) -> Self {
        StorageShape {
            name: st.name.clone(),
            grouped_by: st
                .levels
                .iter()
                .map(|l| l.fields.iter().map(|f| f.to_string()).collect())
                .collect(),
            record: st.record.iter().map(|r| r.name.clone()).collect(),
            traversal: if st.position_major {
                Traversal::PositionMajor
            } else {
                Traversal::GroupMajor
            },
            lengths: lengths(st),
            perm: st.perm,
            split: st.split,
            diagonal: st.is_diagonal(),
            blocks: st.levels.iter().map(|l| l.block).collect(),
        }
    }
}

fn lengths(st: &MaterializedStorage) -> Lengths {
    match (st.offsets, st.len) {
        (true, _) => Lengths::Offsets,
        (false, Some(LenMode::Compact)) => Lengths::Compact,
        (false, Some(LenMode::Padded)) => Lengths::Padded,
        (false, None) => Lengths::Symbolic,
    }
}

/// Physical shape of every storage of a variant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StorageDescriptor {
    pub id: String,
    pub pipeline: String,
    pub format: super::FormatName,
    pub components: Vec<ComponentDesc>,
    pub block_geometry: Option<BlockGeometry>,
    pub padded: bool,
    pub split: bool,
    pub storages: Vec<StorageShape>,
    /// Per-block descriptors of a hybrid layout, one per block pipeline.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<StorageDescriptor>,
}

impl StorageDescriptor {
    /// The descriptor without its identity, for comparing shapes.
    pub fn shape_key(&self) -> String {
        let mut d = self.clone();
        d.id.clear();
        d.pipeline.clear();
        for b in &mut d.blocks {
            b.id.clear();
            b.pipeline.clear();
        }
        serde_json::to_string(&d).expect("descriptor serializes")
    }
}

fn kind_of(source: &RecordSource) -> ComponentKind {
    match source {
        RecordSource::Data(_) => ComponentKind::Value,
        RecordSource::Field(f) if f.as_str() == "row" => ComponentKind::RowIndex,
        RecordSource::Field(f) if f.as_str() == "col" => ComponentKind::ColumnIndex,
        RecordSource::Field(_) => ComponentKind::FieldIndex,
    }
}

/// Extents and layout of the leaf-level arrays.
fn leaf_extents(st: &MaterializedStorage) -> (Vec<String>, Option<Layout>) {
    let n = &st.name;
    if st.offsets || st.is_flat() {
        return (vec![format!("{n}_NNZ")], None);
    }
    let layout = if st.position_major || st.padded() {
        Layout::ColumnMajor
    } else {
        Layout::RowMajor
    };
    (vec![format!("{n}_G"), format!("{n}_W")], Some(layout))
}

/// Component shapes of one storage, in a fixed order.
pub fn storage_components(st: &MaterializedStorage) -> Vec<ComponentDesc> {
    let n = &st.name;
    let mut out = Vec::new();
    let (leaf, layout) = leaf_extents(st);
    let comp = |name: String, kind, extents: Vec<String>, layout| ComponentDesc {
        name,
        kind,
        extents,
        layout,
        fields: Vec::new(),
    };
    if st.offsets {
        let e = if st.position_major {
            format!("{n}_W+1")
        } else if st.is_flat() {
            "2".to_string()
        } else {
            format!("{n}_G+1")
        };
        out.push(comp(format!("{n}_ptr"), ComponentKind::Offset, vec![e], None));
    } else if st.len == Some(LenMode::Compact) {
        let e = if st.position_major {
            format!("{n}_W")
        } else if st.is_flat() {
            "1".to_string()
        } else {
            format!("{n}_G")
        };
        out.push(comp(format!("{n}_len"), ComponentKind::Length, vec![e], None));
    }
    if st.perm {
        out.push(comp(
            format!("{n}_perm"),
            ComponentKind::Permutation,
            vec![format!("{n}_G")],
            None,
        ));
    }
    if needs_index(st) {
        out.push(comp(format!("{n}_idx"), ComponentKind::GroupKey, leaf.clone(), layout));
    }
    if st.levels.iter().any(|l| l.compressed) {
        out.push(comp(
            format!("{n}_nz"),
            ComponentKind::GroupKey,
            vec![format!("{n}_NZG")],
            None,
        ));
    }
    if st.split {
        for r in &st.record {
            out.push(comp(
                format!("{n}_{}", r.name),
                kind_of(&r.source),
                leaf.clone(),
                layout,
            ));
        }
    } else {
        let mut extents = leaf;
        extents.push(st.record.len().to_string());
        out.push(ComponentDesc {
            name: n.clone(),
            kind: ComponentKind::Record,
            extents,
            layout,
            fields: st.record.iter().map(|r| r.name.clone()).collect(),
        });
    }
    out
}

/// Position-major traversal without a permutation stores group keys.
pub(crate) fn needs_index(st: &MaterializedStorage) -> bool {
    st.position_major && !st.perm && !st.padded()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ArrayData {
    Int(Vec<i64>),
    Real(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::Int(v) => v.len(),
            ArrayData::Real(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ints(&self) -> Option<&[i64]> {
        match self {
            ArrayData::Int(v) => Some(v),
            ArrayData::Real(_) => None,
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match self {
            ArrayData::Real(v) => Some(v),
            ArrayData::Int(_) => None,
        }
    }
}

/// Filled physical arrays of one storage and the parameters describing
/// them (`PA_G`, `PA_W`, `PA_NNZ`, `PA_NZG`, `PA_C<l>`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StorageInstance {
    pub params: BTreeMap<String, i64>,
    pub arrays: BTreeMap<String, ArrayData>,
}

/// Fills the physical arrays of `st` from the tuples of `source`.
pub fn build_storage(
    st: &MaterializedStorage,
    source: &TupleReservoir,
    env: &StaticEnv,
) -> Result<StorageInstance, ConcretizeError> {
    let grouped = Grouped::build(st, source, &|e| {
        env.eval(e).map_err(|err| StorageError::Eval(err.to_string()))
    })?;
    layout_grouped(st, &grouped)
}

/// Lays out an already grouped storage.
pub fn layout_grouped(st: &MaterializedStorage, g: &Grouped) -> Result<StorageInstance, ConcretizeError> {
    let n = &st.name;
    let groups = g.groups.len();
    let width = g.width;
    let lo = g.levels.first().map_or(0, |l| l.0);
    let mut params = BTreeMap::new();
    params.insert(format!("{n}_G"), groups as i64);
    params.insert(format!("{n}_W"), width as i64);
    params.insert(format!("{n}_NNZ"), g.leaf_count() as i64);
    params.insert(format!("{n}_NZG"), g.nonempty.len() as i64);
    for (l, (_, count)) in g.levels.iter().enumerate() {
        params.insert(format!("{n}_C{l}"), *count as i64);
    }
    let mut arrays = BTreeMap::new();
    let leaf = |q: usize, k: usize| g.groups[g.order[q]].get(k);
    let mut slots: Vec<Option<&LeafRecord>> = Vec::new();
    let mut idx: Vec<i64> = Vec::new();

    match lengths(st) {
        Lengths::Symbolic => {
            return Err(ConcretizeError::ResidualSymbolic(format!(
                "group lengths of `{n}` are not materialized"
            )))
        }
        Lengths::Offsets if st.position_major => {
            let mut ptr = vec![0i64];
            for k in 0..width {
                for q in 0..groups {
                    if let Some(r) = leaf(q, k) {
                        slots.push(Some(r));
                        idx.push(lo + g.order[q] as i64);
                    }
                }
                ptr.push(slots.len() as i64);
            }
            arrays.insert(format!("{n}_ptr"), ArrayData::Int(ptr));
        }
        Lengths::Offsets => {
            let mut ptr = vec![0i64];
            for q in 0..groups {
                slots.extend(g.groups[g.order[q]].iter().map(Some));
                ptr.push(slots.len() as i64);
            }
            arrays.insert(format!("{n}_ptr"), ArrayData::Int(ptr));
        }
        Lengths::Compact if st.position_major => {
            slots = vec![None; groups * width];
            idx = vec![0; groups * width];
            let mut len = Vec::with_capacity(width);
            for k in 0..width {
                let mut j = 0;
                for q in 0..groups {
                    if let Some(r) = leaf(q, k) {
                        slots[k * groups + j] = Some(r);
                        idx[k * groups + j] = lo + g.order[q] as i64;
                        j += 1;
                    }
                }
                len.push(j as i64);
            }
            arrays.insert(format!("{n}_len"), ArrayData::Int(len));
        }
        Lengths::Compact => {
            slots = vec![None; groups * width];
            let mut len = Vec::with_capacity(groups);
            for q in 0..groups {
                let grp = &g.groups[g.order[q]];
                for (k, r) in grp.iter().enumerate() {
                    slots[q * width + k] = Some(r);
                }
                len.push(grp.len() as i64);
            }
            arrays.insert(format!("{n}_len"), ArrayData::Int(len));
        }
        Lengths::Padded => {
            slots = vec![None; groups * width];
            for q in 0..groups {
                for k in 0..width {
                    slots[k * groups + q] = leaf(q, k);
                }
            }
        }
    }
    if st.perm {
        arrays.insert(
            format!("{n}_perm"),
            ArrayData::Int(g.order.iter().map(|&q| q as i64).collect()),
        );
    }
    if needs_index(st) {
        arrays.insert(format!("{n}_idx"), ArrayData::Int(idx));
    }
    if st.levels.iter().any(|l| l.compressed) {
        arrays.insert(format!("{n}_nz"), ArrayData::Int(g.nonempty.clone()));
    }

    let value = |r: Option<&LeafRecord>, f: usize| r.map_or(0.0, |r| r.values[f]);
    if st.split {
        for (f, rf) in st.record.iter().enumerate() {
            let data = match rf.source {
                RecordSource::Field(_) => {
                    ArrayData::Int(slots.iter().map(|r| value(*r, f) as i64).collect())
                }
                RecordSource::Data(_) => {
                    ArrayData::Real(slots.iter().map(|r| value(*r, f)).collect())
                }
            };
            arrays.insert(format!("{n}_{}", rf.name), data);
        }
    } else {
        let mut flat = Vec::with_capacity(slots.len() * st.record.len());
        for r in &slots {
            for f in 0..st.record.len() {
                flat.push(value(*r, f));
            }
        }
        arrays.insert(n.clone(), ArrayData::Real(flat));
    }
    Ok(StorageInstance { params, arrays })
}
