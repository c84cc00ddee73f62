//! Concretization: mapping materialized programs onto physical arrays and
//! ordered loops, and naming the resulting formats.

mod layout;
mod lower;
mod lowered;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use layout::*;
pub use lower::lower;
pub use lowered::*;

use crate::exec::Bindings;
use crate::ir::*;
use crate::transform::{apply_pipeline, Pipeline, PipelineError, StorageError};

#[derive(Debug, Error)]
pub enum ConcretizeError {
    #[error("residual symbolic domain: {0}")]
    ResidualSymbolic(String),
    #[error("residual reservoir condition: {0}")]
    ResidualReservoir(String),
    #[error("cannot concretize: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Ir(#[from] IrError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum FormatName {
    #[serde(rename = "COO")]
    Coo,
    #[serde(rename = "CSR")]
    Csr,
    #[serde(rename = "CCS")]
    Ccs,
    #[serde(rename = "ELLPACK_ITPACK")]
    EllpackItpack,
    #[serde(rename = "JDS")]
    Jds,
    #[serde(rename = "BLOCKED_HYBRID")]
    BlockedHybrid,
    #[serde(rename = "UNNAMED")]
    Unnamed,
}

impl fmt::Display for FormatName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormatName::Coo => "COO",
            FormatName::Csr => "CSR",
            FormatName::Ccs => "CCS",
            FormatName::EllpackItpack => "ELLPACK_ITPACK",
            FormatName::Jds => "JDS",
            FormatName::BlockedHybrid => "BLOCKED_HYBRID",
            FormatName::Unnamed => "UNNAMED",
        })
    }
}

/// Names the format of a descriptor from its shape alone. Diagonal
/// storages (such as the pivots of a triangular solve) are ignored.
pub fn recognize_format(d: &StorageDescriptor) -> FormatName {
    if d.block_geometry.is_some() || !d.blocks.is_empty() {
        return FormatName::BlockedHybrid;
    }
    let main: Vec<&StorageShape> = d.storages.iter().filter(|s| !s.diagonal).collect();
    let [s] = main.as_slice() else {
        return FormatName::Unnamed;
    };
    if !s.split || !s.record.iter().any(|r| r == "value") {
        return FormatName::Unnamed;
    }
    let has = |f: &str| s.record.iter().any(|r| r == f);
    let by = |f: &str| s.grouped_by.len() == 1 && s.grouped_by[0] == [f.to_string()];
    let group_major = s.traversal == Traversal::GroupMajor;
    match s.lengths {
        Lengths::Compact | Lengths::Offsets if s.grouped_by.is_empty() && has("row") && has("col") => {
            FormatName::Coo
        }
        Lengths::Offsets if by("row") && group_major && !s.perm && has("col") => FormatName::Csr,
        Lengths::Offsets if by("col") && group_major && !s.perm && has("row") => FormatName::Ccs,
        Lengths::Padded if by("row") && group_major && !s.perm && has("col") => {
            FormatName::EllpackItpack
        }
        Lengths::Offsets if by("row") && !group_major && s.perm && has("col") => FormatName::Jds,
        _ => FormatName::Unnamed,
    }
}

/// Short stable identifier of a pipeline text.
pub fn variant_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

/// Per-block layout: the matrix is cut into `x`-row (and `y`-column) blocks,
/// visited in ascending `(ii, jj)`; block `b` uses part `b % parts.len()`.
#[derive(Clone, Debug)]
pub struct HybridPlan {
    pub geometry: BlockGeometry,
    pub parts: Vec<ConcreteVariant>,
    /// Reservoir that is partitioned.
    pub matrix: String,
}

/// An executable variant: the lowered loop nest, the storage plan it reads
/// and the shape of the physical storage.
#[derive(Clone, Debug)]
pub struct ConcreteVariant {
    pub id: String,
    pub pipeline: Pipeline,
    pub format: FormatName,
    pub descriptor: StorageDescriptor,
    /// The transformed program before lowering.
    pub program: Program,
    pub lowered: LoweredProgram,
    pub hybrid: Option<HybridPlan>,
}

impl ConcreteVariant {
    pub fn descriptor_json(&self) -> String {
        serde_json::to_string_pretty(&self.descriptor).expect("descriptor serializes")
    }
}

fn descriptor_of(program: &Program, id: &str, pipeline: &str) -> StorageDescriptor {
    let blocks: Vec<u32> = program
        .storages
        .iter()
        .flat_map(|s| s.levels.iter().filter_map(|l| l.block))
        .collect();
    let block_geometry = blocks.first().map(|&x| BlockGeometry {
        x,
        y: blocks.get(1).copied(),
    });
    let mut d = StorageDescriptor {
        id: id.to_string(),
        pipeline: pipeline.to_string(),
        format: FormatName::Unnamed,
        components: program.storages.iter().flat_map(storage_components).collect(),
        block_geometry,
        padded: program.storages.iter().any(|s| s.padded()),
        split: !program.storages.is_empty() && program.storages.iter().all(|s| s.split),
        storages: program.storages.iter().map(StorageShape::of).collect(),
        blocks: Vec::new(),
    };
    d.format = recognize_format(&d);
    d
}

/// Concretizes a transformed program.
pub fn concretize(program: &Program, pipeline: &Pipeline) -> Result<ConcreteVariant, ConcretizeError> {
    if program.storages.is_empty() {
        return Err(ConcretizeError::ResidualReservoir(
            "nothing is materialized".into(),
        ));
    }
    let lowered = lower(program)?;
    let text = pipeline.to_string();
    let id = variant_id(&text);
    let descriptor = descriptor_of(program, &id, &text);
    Ok(ConcreteVariant {
        id,
        pipeline: pipeline.clone(),
        format: descriptor.format,
        descriptor,
        program: program.clone(),
        lowered,
        hybrid: None,
    })
}

/// Applies `pipeline` to `root` and concretizes the result.
pub fn derive_variant(root: &Program, pipeline: &Pipeline) -> Result<ConcreteVariant, ConcretizeError> {
    let p = apply_pipeline(root, pipeline)?;
    concretize(&p, pipeline)
}

/// Builds a hybrid variant: every block of the matrix gets its own storage,
/// derived by one of `per_block` from the untransformed kernel.
pub fn blocked_concretize(
    spec: &KernelSpec,
    geometry: BlockGeometry,
    per_block: &[Pipeline],
) -> Result<ConcreteVariant, ConcretizeError> {
    if spec.kind == KernelKind::TrSv {
        return Err(ConcretizeError::Invalid(
            "blocks of a triangular solve depend on each other".into(),
        ));
    }
    if geometry.x == 0 || geometry.y == Some(0) || per_block.is_empty() {
        return Err(ConcretizeError::Invalid(
            "hybrid layout needs positive block sizes and at least one pipeline".into(),
        ));
    }
    let parts = per_block
        .iter()
        .map(|pl| derive_variant(&spec.program, pl))
        .collect::<Result<Vec<_>, _>>()?;
    let texts: Vec<String> = per_block.iter().map(|p| p.to_string()).collect();
    let text = match geometry.y {
        Some(y) => format!("hybrid({},{};{})", geometry.x, y, texts.join("|")),
        None => format!("hybrid({};{})", geometry.x, texts.join("|")),
    };
    let id = variant_id(&text);
    let descriptor = StorageDescriptor {
        id: id.clone(),
        pipeline: text,
        format: FormatName::BlockedHybrid,
        components: Vec::new(),
        block_geometry: Some(geometry),
        padded: parts.iter().any(|p| p.descriptor.padded),
        split: parts.iter().all(|p| p.descriptor.split),
        storages: Vec::new(),
        blocks: parts.iter().map(|p| p.descriptor.clone()).collect(),
    };
    Ok(ConcreteVariant {
        id,
        pipeline: Pipeline::default(),
        format: FormatName::BlockedHybrid,
        descriptor,
        program: spec.program.clone(),
        lowered: LoweredProgram::default(),
        hybrid: Some(HybridPlan {
            geometry,
            parts,
            matrix: spec.matrix.clone(),
        }),
    })
}

/// Physical storage of a variant for one set of operands.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantInstance {
    pub params: BTreeMap<String, i64>,
    pub arrays: BTreeMap<String, ArrayData>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockInstance {
    pub ii: usize,
    pub jj: usize,
    pub part: usize,
    pub instance: VariantInstance,
}

/// Fills the physical storage of `variant` from the operands.
pub fn build_variant(variant: &ConcreteVariant, bindings: &Bindings) -> Result<VariantInstance, ConcretizeError> {
    if let Some(h) = &variant.hybrid {
        return build_hybrid(h, bindings);
    }
    let resolved = resolve_reservoirs(&variant.program, &bindings.reservoirs)?;
    let env = StaticEnv {
        params: &bindings.params,
        reservoirs: &resolved,
    };
    let mut params = bindings.params.clone();
    for e in &variant.lowered.extents {
        let r = resolved
            .get(&e.reservoir)
            .ok_or_else(|| IrError::UnknownReservoir(e.reservoir.clone()))?;
        let v = field_extent(r, &FieldName::new(e.field.as_str())).map_err(|reason| IrError::Eval {
            expr: format!("extent({}.{})", e.reservoir, e.field),
            reason,
        })?;
        params.insert(e.name.clone(), v);
    }
    let mut arrays = BTreeMap::new();
    for st in &variant.program.storages {
        let source = resolved
            .get(&st.source)
            .ok_or_else(|| IrError::UnknownReservoir(st.source.clone()))?;
        let inst = build_storage(st, source, &env)?;
        params.extend(inst.params);
        arrays.extend(inst.arrays);
    }
    Ok(VariantInstance {
        params,
        arrays,
        blocks: Vec::new(),
    })
}

fn build_hybrid(h: &HybridPlan, bindings: &Bindings) -> Result<VariantInstance, ConcretizeError> {
    let matrix = bindings
        .reservoirs
        .get(&h.matrix)
        .ok_or_else(|| IrError::MissingInput(h.matrix.clone()))?;
    let field = |f: &str| {
        matrix
            .field_index(&FieldName::new(f))
            .ok_or_else(|| ConcretizeError::Invalid(format!("matrix has no `{f}` field")))
    };
    let (ri, ci) = (field("row")?, field("col")?);
    let extent = |i: usize| matrix.tuples().iter().map(|t| t[i] + 1).max().unwrap_or(0);
    let x = h.geometry.x as i64;
    let row_blocks = (extent(ri) + x - 1) / x;
    let (y, col_blocks) = match h.geometry.y {
        Some(y) => (y as i64, (extent(ci) + y as i64 - 1) / y as i64),
        None => (i64::MAX, 1),
    };
    let mut blocks = Vec::new();
    for ii in 0..row_blocks {
        for jj in 0..col_blocks {
            let sub = matrix.select(|t| t[ri] / x == ii && (y == i64::MAX || t[ci] / y == jj));
            let mut b = bindings.clone();
            b.reservoirs.insert(h.matrix.clone(), sub);
            let part = blocks.len() % h.parts.len();
            let instance = build_variant(&h.parts[part], &b)?;
            blocks.push(BlockInstance {
                ii: ii as usize,
                jj: jj as usize,
                part,
                instance,
            });
        }
    }
    Ok(VariantInstance {
        params: bindings.params.clone(),
        arrays: BTreeMap::new(),
        blocks,
    })
}
