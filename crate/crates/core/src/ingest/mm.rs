use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::IngestError;
use crate::exec::SparseOperand;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmField {
    Real,
    Integer,
    Pattern,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MmSymmetry {
    General,
    Symmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MmHeader {
    pub field: MmField,
    pub symmetry: MmSymmetry,
}

impl MmHeader {
    pub const GENERAL_REAL: MmHeader = MmHeader {
        field: MmField::Real,
        symmetry: MmSymmetry::General,
    };
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Add up repeated coordinates instead of rejecting them.
    pub sum_duplicates: bool,
}

fn parse_header(line: &str) -> Result<MmHeader, IngestError> {
    let words: Vec<String> = line.split_whitespace().map(|w| w.to_ascii_lowercase()).collect();
    let [banner, object, format, field, symmetry] = words.as_slice() else {
        return Err(IngestError::Header(line.to_string()));
    };
    if banner != "%%matrixmarket" || object != "matrix" {
        return Err(IngestError::Header(line.to_string()));
    }
    if format != "coordinate" {
        return Err(IngestError::Unsupported(format.clone()));
    }
    let field = match field.as_str() {
        "real" => MmField::Real,
        "integer" => MmField::Integer,
        "pattern" => MmField::Pattern,
        other => return Err(IngestError::Unsupported(other.to_string())),
    };
    let symmetry = match symmetry.as_str() {
        "general" => MmSymmetry::General,
        "symmetric" => MmSymmetry::Symmetric,
        other => return Err(IngestError::Unsupported(other.to_string())),
    };
    Ok(MmHeader { field, symmetry })
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T, IngestError> {
    let tok = tok.ok_or_else(|| IngestError::Parse {
        line,
        reason: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| IngestError::Parse {
        line,
        reason: format!("bad {what} `{tok}`"),
    })
}

/// Parses Matrix Market coordinate text into 0-based entries.
pub fn parse_matrix_market(text: &str, opts: &ReadOptions) -> Result<(SparseOperand, MmHeader), IngestError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines
        .next()
        .ok_or_else(|| IngestError::Header("empty input".into()))?;
    let header = parse_header(first)?;
    let mut body = lines.filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('%')
    });
    let (size_line, size) = body
        .next()
        .ok_or_else(|| IngestError::Header("missing size line".into()))?;
    let mut toks = size.split_whitespace();
    let n_rows: usize = parse_num(toks.next(), size_line, "row count")?;
    let n_cols: usize = parse_num(toks.next(), size_line, "column count")?;
    let declared: usize = parse_num(toks.next(), size_line, "entry count")?;
    if header.symmetry == MmSymmetry::Symmetric && n_rows != n_cols {
        return Err(IngestError::Header(format!(
            "symmetric matrix must be square, got {n_rows}x{n_cols}"
        )));
    }

    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut add = |r: usize, c: usize, v: f64| -> Result<(), IngestError> {
        match entries.get_mut(&(r, c)) {
            Some(old) if opts.sum_duplicates => *old += v,
            Some(_) => return Err(IngestError::Duplicate { row: r + 1, col: c + 1 }),
            None => {
                entries.insert((r, c), v);
            }
        }
        Ok(())
    };
    let mut count = 0usize;
    for (line, text) in body {
        count += 1;
        if count > declared {
            return Err(IngestError::Parse {
                line,
                reason: format!("more than the declared {declared} entries"),
            });
        }
        let mut toks = text.split_whitespace();
        let row: i64 = parse_num(toks.next(), line, "row index")?;
        let col: i64 = parse_num(toks.next(), line, "column index")?;
        let value = match header.field {
            MmField::Pattern => 1.0,
            MmField::Integer => parse_num::<i64>(toks.next(), line, "value")? as f64,
            MmField::Real => parse_num::<f64>(toks.next(), line, "value")?,
        };
        if toks.next().is_some() {
            return Err(IngestError::Parse {
                line,
                reason: "trailing tokens".into(),
            });
        }
        if row < 1 || col < 1 || row as usize > n_rows || col as usize > n_cols {
            return Err(IngestError::OutOfBounds {
                line,
                row,
                col,
                n_rows,
                n_cols,
            });
        }
        let (r, c) = (row as usize - 1, col as usize - 1);
        add(r, c, value)?;
        if header.symmetry == MmSymmetry::Symmetric && r != c {
            add(c, r, value)?;
        }
    }
    if count != declared {
        return Err(IngestError::Parse {
            line: text.lines().count(),
            reason: format!("declared {declared} entries, found {count}"),
        });
    }
    let m = SparseOperand::new(
        n_rows,
        n_cols,
        entries.into_iter().map(|((r, c), v)| (r, c, v)).collect(),
    )
    .expect("entries checked above");
    Ok((m, header))
}

pub fn read_matrix_market(path: &Path, opts: &ReadOptions) -> Result<SparseOperand, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_matrix_market(&text, opts).map(|(m, _)| m)
}

/// Formats `m` under `header`. Symmetric output stores the lower triangle
/// and requires a symmetric matrix; pattern output drops the values.
pub fn format_matrix_market(m: &SparseOperand, header: MmHeader) -> Result<String, IngestError> {
    let mut out = String::new();
    let field = match header.field {
        MmField::Real => "real",
        MmField::Integer => "integer",
        MmField::Pattern => "pattern",
    };
    let sym = match header.symmetry {
        MmSymmetry::General => "general",
        MmSymmetry::Symmetric => "symmetric",
    };
    let entries: Vec<(usize, usize, f64)> = match header.symmetry {
        MmSymmetry::General => m.entries().to_vec(),
        MmSymmetry::Symmetric => {
            let map: BTreeMap<(usize, usize), f64> =
                m.entries().iter().map(|&(r, c, v)| ((r, c), v)).collect();
            if m.n_rows != m.n_cols
                || map.iter().any(|(&(r, c), v)| map.get(&(c, r)).map(|w| w.to_bits()) != Some(v.to_bits()))
            {
                return Err(IngestError::NotSymmetric(
                    "matrix is not symmetric; write it as general".into(),
                ));
            }
            m.entries().iter().copied().filter(|&(r, c, _)| c <= r).collect()
        }
    };
    if header.field == MmField::Integer {
        if let Some(&(r, c, v)) = entries.iter().find(|e| e.2.fract() != 0.0 || !e.2.is_finite()) {
            return Err(IngestError::Infeasible(format!(
                "entry ({}, {}) = {v} is not an integer",
                r + 1,
                c + 1
            )));
        }
    }
    let _ = writeln!(out, "%%MatrixMarket matrix coordinate {field} {sym}");
    let _ = writeln!(out, "{} {} {}", m.n_rows, m.n_cols, entries.len());
    for (r, c, v) in entries {
        let _ = match header.field {
            MmField::Pattern => writeln!(out, "{} {}", r + 1, c + 1),
            MmField::Integer => writeln!(out, "{} {} {}", r + 1, c + 1, v as i64),
            MmField::Real => writeln!(out, "{} {} {:e}", r + 1, c + 1, v),
        };
    }
    Ok(out)
}

pub fn write_matrix_market(path: &Path, m: &SparseOperand, header: MmHeader) -> Result<(), IngestError> {
    let text = format_matrix_market(m, header)?;
    std::fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}
