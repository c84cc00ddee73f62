//! Pipelines: comma-separated pass sequences such as
//! `orth(row),encap,matdep,split,nstar(compact),dimreduce`.
//!
//! A step may carry `@n` to select its n-th candidate target.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::passes::{apply_pass, Pass, TransformError};
use super::storage::LenMode;
use crate::ir::{FieldName, Program};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PassStep {
    pub pass: Pass,
    pub target: usize,
}

impl fmt::Display for PassStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.target == 0 {
            write!(f, "{}", self.pass)
        } else {
            write!(f, "{}@{}", self.pass, self.target)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Pipeline(pub Vec<PassStep>);

impl Pipeline {
    pub fn steps(&self) -> &[PassStep] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn then(&self, step: PassStep) -> Pipeline {
        let mut v = self.0.clone();
        v.push(step);
        Pipeline(v)
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, s) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad pipeline step `{step}`: {reason}")]
pub struct PipelineSyntaxError {
    pub step: String,
    pub reason: String,
}

/// First pass of a pipeline that could not be applied.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pass {index} (`{pass}`) failed: {reason}")]
pub struct PipelineError {
    pub index: usize,
    pub pass: String,
    pub reason: TransformError,
}

/// Splits on commas outside parentheses.
fn split_top(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}

impl FromStr for PassStep {
    type Err = PipelineSyntaxError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let text = text.trim();
        let bad = |reason: &str| PipelineSyntaxError {
            step: text.to_string(),
            reason: reason.to_string(),
        };
        let (body, target) = match text.rsplit_once('@') {
            Some((b, n)) => (
                b.trim(),
                n.trim().parse::<usize>().map_err(|_| bad("target must be a number"))?,
            ),
            None => (text, 0),
        };
        let (name, args): (&str, Vec<&str>) = match body.find('(') {
            Some(open) => {
                let inner = body[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| bad("unbalanced parentheses"))?;
                let args = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|a| !a.is_empty())
                    .collect();
                (body[..open].trim(), args)
            }
            None => (body, Vec::new()),
        };
        let no_args = |p: Pass| {
            if args.is_empty() {
                Ok(p)
            } else {
                Err(bad("takes no arguments"))
            }
        };
        let size = |s: &str| {
            s.parse::<u32>()
                .ok()
                .filter(|&x| x >= 1)
                .ok_or_else(|| bad("block size must be a positive integer"))
        };
        let pass = match name.to_ascii_lowercase().as_str() {
            "orth" | "orthogonalize" => {
                if args.is_empty() {
                    return Err(bad("needs at least one field"));
                }
                Pass::Orthogonalize(args.iter().map(|a| FieldName::new(*a)).collect())
            }
            "encap" | "encapsulate" => no_args(Pass::Encapsulate)?,
            "unorth" => match args.as_slice() {
                [f] => Pass::UndoOrthogonalize(FieldName::new(*f)),
                _ => return Err(bad("needs exactly one field")),
            },
            "matind" => no_args(Pass::MaterializeIndependent)?,
            "matdep" => no_args(Pass::MaterializeDependent)?,
            "hreduce" => no_args(Pass::HorizontalReduce)?,
            "split" => no_args(Pass::StructureSplit)?,
            "nstar" => match args.as_slice() {
                ["compact"] | [] => Pass::NStarMaterialize(LenMode::Compact),
                ["padded"] => Pass::NStarMaterialize(LenMode::Padded),
                _ => return Err(bad("expected nstar(compact) or nstar(padded)")),
            },
            "sort" => no_args(Pass::NStarSort)?,
            "dimreduce" => no_args(Pass::DimReduce)?,
            "collapse" => no_args(Pass::LoopCollapse)?,
            "interchange" => match args.as_slice() {
                [] => Pass::LoopInterchange(None),
                [a, b] => Pass::LoopInterchange(Some((a.to_string(), b.to_string()))),
                _ => return Err(bad("expected interchange or interchange(i,j)")),
            },
            "block" => match args.as_slice() {
                [x] => Pass::LoopBlock {
                    var: None,
                    size: size(x)?,
                },
                [v, x] => Pass::LoopBlock {
                    var: Some(v.to_string()),
                    size: size(x)?,
                },
                _ => return Err(bad("expected block(x) or block(i,x)")),
            },
            _ => return Err(bad("unknown pass")),
        };
        Ok(PassStep { pass, target })
    }
}

impl FromStr for Pipeline {
    type Err = PipelineSyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(Pipeline::default());
        }
        split_top(s)
            .into_iter()
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map(Pipeline)
    }
}

/// Applies the passes in order, reporting the first one that fails.
pub fn apply_pipeline(program: &Program, pipeline: &Pipeline) -> Result<Program, PipelineError> {
    let mut p = program.clone();
    for (index, step) in pipeline.steps().iter().enumerate() {
        p = apply_pass(&p, &step.pass, step.target).map_err(|reason| PipelineError {
            index,
            pass: step.to_string(),
            reason,
        })?;
    }
    Ok(p)
}

/// Canonical pipelines of the well-known formats.
pub const COO_PIPELINE: &str = "matind,split,nstar(compact)";
pub const CSR_PIPELINE: &str = "orth(row),encap,matdep,split,nstar(compact),dimreduce";
pub const CCS_PIPELINE: &str = "orth(col),encap,matdep,split,nstar(compact),dimreduce";
pub const ITPACK_PIPELINE: &str = "orth(row),encap,matdep,split,nstar(padded)";
pub const JDS_PIPELINE: &str =
    "orth(row),encap,matdep,split,sort,interchange,nstar(compact),dimreduce";

pub fn canonical_pipelines() -> [(&'static str, &'static str); 5] {
    [
        ("COO", COO_PIPELINE),
        ("CSR", CSR_PIPELINE),
        ("CCS", CCS_PIPELINE),
        ("ITPACK", ITPACK_PIPELINE),
        ("JDS", JDS_PIPELINE),
    ]
}
