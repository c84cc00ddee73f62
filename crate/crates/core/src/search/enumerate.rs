use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::concretize::{concretize, ConcreteVariant, FormatName};
use crate::ir::{describe_storage, print_program, FieldName, KernelSpec, Program};
use crate::transform::{apply_pass, candidates, LenMode, Pass, PassStep, Pipeline};

#[derive(Clone, Debug)]
pub struct EnumerateOptions {
    /// Longest pipeline explored.
    pub depth: usize,
    pub block_sizes: Vec<u32>,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            depth: 8,
            block_sizes: vec![2, 4, 8],
        }
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub pipeline: Pipeline,
    pub program: Program,
    pub parent: Option<usize>,
    pub depth: usize,
    /// Index into [`VariantTree::variants`] when the node concretizes.
    pub variant: Option<usize>,
}

impl TreeNode {
    pub fn executable(&self) -> bool {
        self.variant.is_some()
    }
}

/// Programs reachable from a kernel by applicable passes, and the distinct
/// executable variants among them.
#[derive(Clone, Debug)]
pub struct VariantTree {
    pub root: KernelSpec,
    pub nodes: Vec<TreeNode>,
    pub variants: Vec<ConcreteVariant>,
}

/// Canonical text of a program including its storage plans.
fn canonical(p: &Program) -> String {
    let mut s = print_program(p);
    for st in &p.storages {
        s.push('\n');
        s.push_str(&describe_storage(st));
    }
    s
}

/// Every pass instance worth trying on `program`.
pub fn pass_menu(program: &Program, block_sizes: &[u32]) -> Vec<Pass> {
    let fields: BTreeSet<&FieldName> = program.reservoirs.iter().flat_map(|r| r.fields.iter()).collect();
    let mut out: Vec<Pass> = fields
        .iter()
        .map(|f| Pass::Orthogonalize(vec![(*f).clone()]))
        .collect();
    out.extend([
        Pass::Encapsulate,
        Pass::MaterializeIndependent,
        Pass::MaterializeDependent,
        Pass::HorizontalReduce,
        Pass::StructureSplit,
        Pass::NStarMaterialize(LenMode::Padded),
        Pass::NStarMaterialize(LenMode::Compact),
        Pass::NStarSort,
        Pass::DimReduce,
        Pass::LoopCollapse,
        Pass::LoopInterchange(None),
    ]);
    out.extend(fields.iter().map(|f| Pass::UndoOrthogonalize((*f).clone())));
    out.extend(block_sizes.iter().map(|&size| Pass::LoopBlock { var: None, size }));
    out
}

/// Breadth-first closure over applicable passes up to `opts.depth`.
/// Programs reached along several paths are kept once; variants with the
/// same lowered nest and storage shape are kept once.
pub fn enumerate_variants(spec: &KernelSpec, opts: &EnumerateOptions) -> VariantTree {
    let mut tree = VariantTree {
        root: spec.clone(),
        nodes: vec![TreeNode {
            pipeline: Pipeline::default(),
            program: spec.program.clone(),
            parent: None,
            depth: 0,
            variant: None,
        }],
        variants: Vec::new(),
    };
    let mut seen: HashSet<String> = HashSet::from([canonical(&spec.program)]);
    let mut variant_keys: HashMap<String, usize> = HashMap::new();
    let mut frontier = vec![0usize];
    for depth in 1..=opts.depth {
        let mut next = Vec::new();
        for &parent in &frontier {
            let program = tree.nodes[parent].program.clone();
            for pass in pass_menu(&program, &opts.block_sizes) {
                for target in 0..candidates(&program, &pass).len() {
                    let Ok(child) = apply_pass(&program, &pass, target) else {
                        continue;
                    };
                    if !seen.insert(canonical(&child)) {
                        continue;
                    }
                    let pipeline = tree.nodes[parent].pipeline.then(PassStep {
                        pass: pass.clone(),
                        target,
                    });
                    let variant = concretize(&child, &pipeline).ok().map(|v| {
                        let key = format!("{}\n{}", v.lowered, v.descriptor.shape_key());
                        *variant_keys.entry(key).or_insert_with(|| {
                            tree.variants.push(v);
                            tree.variants.len() - 1
                        })
                    });
                    tree.nodes.push(TreeNode {
                        pipeline,
                        program: child,
                        parent: Some(parent),
                        depth,
                        variant,
                    });
                    next.push(tree.nodes.len() - 1);
                }
            }
        }
        frontier = next;
    }
    tree
}

#[derive(Serialize)]
struct NodeRow<'a> {
    node: usize,
    parent: Option<usize>,
    depth: usize,
    pipeline: String,
    executable: bool,
    variant_id: Option<&'a str>,
    format: Option<FormatName>,
}

impl VariantTree {
    pub fn variant(&self, id: &str) -> Option<&ConcreteVariant> {
        self.variants.iter().find(|v| v.id == id)
    }

    pub fn formats(&self) -> BTreeSet<FormatName> {
        self.variants.iter().map(|v| v.format).collect()
    }

    /// Number of distinct storage shapes among the variants.
    pub fn shape_count(&self) -> usize {
        self.variants
            .iter()
            .map(|v| v.descriptor.shape_key())
            .collect::<HashSet<_>>()
            .len()
    }

    fn rows(&self) -> Vec<NodeRow<'_>> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(n, node)| {
                let v = node.variant.map(|i| &self.variants[i]);
                NodeRow {
                    node: n,
                    parent: node.parent,
                    depth: node.depth,
                    pipeline: node.pipeline.to_string(),
                    executable: v.is_some(),
                    variant_id: v.map(|v| v.id.as_str()),
                    format: v.map(|v| v.format),
                }
            })
            .collect()
    }

    /// One row per node: `node,parent,depth,pipeline,executable,variant_id,format`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["node", "parent", "depth", "pipeline", "executable", "variant_id", "format"])
            .expect("in-memory write");
        for r in self.rows() {
            w.write_record([
                r.node.to_string(),
                r.parent.map(|p| p.to_string()).unwrap_or_default(),
                r.depth.to_string(),
                r.pipeline,
                r.executable.to_string(),
                r.variant_id.unwrap_or_default().to_string(),
                r.format.map(|f| f.to_string()).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows()).expect("rows serialize")
    }

    /// Indented tree; nodes that do not concretize are prefixed `tmp`.
    pub fn dump(&self) -> String {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (n, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                children[p].push(n);
            }
        }
        let mut out = String::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let label = match node.pipeline.steps().last() {
                Some(step) => step.to_string(),
                None => self.root.kind.to_string(),
            };
            let pad = "  ".repeat(node.depth);
            match node.variant {
                Some(v) => {
                    let v = &self.variants[v];
                    let _ = writeln!(out, "{pad}{label} [{} {}]", v.id, v.format);
                }
                None => {
                    let _ = writeln!(out, "{pad}tmp {label}");
                }
            }
            stack.extend(children[n].iter().rev());
        }
        out
    }
}
