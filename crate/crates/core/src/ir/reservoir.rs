use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use super::FieldName;

#[derive(Debug, Error, PartialEq)]
pub enum ReservoirError {
    #[error("duplicate field `{0}` in reservoir schema")]
    DuplicateField(FieldName),
    #[error("empty field name in reservoir schema")]
    EmptyField,
    #[error("tuple {tuple:?} has {got} components, schema has {want}")]
    Arity {
        tuple: Vec<i64>,
        got: usize,
        want: usize,
    },
    #[error("duplicate tuple {0:?}")]
    DuplicateTuple(Vec<i64>),
    #[error("binding `{name}` has {got} values for {want} tuples")]
    BindingLength {
        name: String,
        got: usize,
        want: usize,
    },
    #[error("projection of `{source_name}` onto {fields:?} collapses tuples {a:?} and {b:?}")]
    AmbiguousProjection {
        source_name: String,
        fields: Vec<FieldName>,
        a: Vec<i64>,
        b: Vec<i64>,
    },
    #[error("unknown field `{0}`")]
    UnknownField(FieldName),
}

/// Identity of an input tuple: which input reservoir and which position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TupleId {
    pub source: u32,
    pub index: u32,
}

/// A finite set of integer tuples over a named schema, plus the address
/// functions (data bindings) that map each tuple to a scalar.
///
/// Tuples are kept sorted lexicographically; this order doubles as the
/// canonical order used wherever an unordered iteration must be made
/// deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleReservoir {
    schema: Vec<FieldName>,
    tuples: Vec<Vec<i64>>,
    bindings: BTreeMap<String, Vec<f64>>,
    lineage: Vec<Vec<TupleId>>,
}

impl TupleReservoir {
    /// Builds a reservoir from `(tuple, binding values)` rows; `bindings`
    /// names the value columns.
    pub fn build(
        schema: Vec<FieldName>,
        bindings: &[&str],
        rows: impl IntoIterator<Item = (Vec<i64>, Vec<f64>)>,
    ) -> Result<Self, ReservoirError> {
        check_schema(&schema)?;
        let mut rows: Vec<(Vec<i64>, Vec<f64>)> = rows.into_iter().collect();
        for (t, v) in &rows {
            if t.len() != schema.len() {
                return Err(ReservoirError::Arity {
                    tuple: t.clone(),
                    got: t.len(),
                    want: schema.len(),
                });
            }
            if v.len() != bindings.len() {
                return Err(ReservoirError::BindingLength {
                    name: bindings.join(","),
                    got: v.len(),
                    want: bindings.len(),
                });
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ReservoirError::DuplicateTuple(w[0].0.clone()));
        }
        let mut columns: BTreeMap<String, Vec<f64>> = bindings
            .iter()
            .map(|b| (b.to_string(), Vec::with_capacity(rows.len())))
            .collect();
        let mut tuples = Vec::with_capacity(rows.len());
        for (t, vals) in rows {
            for (name, v) in bindings.iter().zip(vals) {
                columns.get_mut(*name).expect("binding column").push(v);
            }
            tuples.push(t);
        }
        let lineage = identity_lineage(0, tuples.len());
        Ok(TupleReservoir {
            schema,
            tuples,
            bindings: columns,
            lineage,
        })
    }

    /// A reservoir without data bindings.
    pub fn new(schema: Vec<FieldName>, tuples: Vec<Vec<i64>>) -> Result<Self, ReservoirError> {
        Self::build(schema, &[], tuples.into_iter().map(|t| (t, Vec::new())))
    }

    pub fn empty(schema: Vec<FieldName>) -> Self {
        TupleReservoir {
            schema,
            tuples: Vec::new(),
            bindings: BTreeMap::new(),
            lineage: Vec::new(),
        }
    }

    pub fn schema(&self) -> &[FieldName] {
        &self.schema
    }

    pub fn tuples(&self) -> &[Vec<i64>] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn binding(&self, name: &str) -> Option<&[f64]> {
        self.bindings.get(name).map(Vec::as_slice)
    }

    pub fn binding_names(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    pub fn field_index(&self, field: &FieldName) -> Option<usize> {
        self.schema.iter().position(|f| f == field)
    }

    pub fn lineage(&self, index: usize) -> &[TupleId] {
        &self.lineage[index]
    }

    /// Tags every tuple as originating from input reservoir `source`.
    pub fn with_source_id(mut self, source: u32) -> Self {
        self.lineage = identity_lineage(source, self.tuples.len());
        self
    }

    /// The tuples satisfying `keep`, with their bindings and lineage.
    pub fn select(&self, keep: impl Fn(&[i64]) -> bool) -> Self {
        let picked: Vec<usize> = (0..self.tuples.len())
            .filter(|&n| keep(&self.tuples[n]))
            .collect();
        TupleReservoir {
            schema: self.schema.clone(),
            tuples: picked.iter().map(|&n| self.tuples[n].clone()).collect(),
            bindings: self
                .bindings
                .iter()
                .map(|(k, col)| (k.clone(), picked.iter().map(|&n| col[n]).collect()))
                .collect(),
            lineage: picked.iter().map(|&n| self.lineage[n].clone()).collect(),
        }
    }

    /// All fields nonnegative.
    pub fn is_normalized(&self) -> bool {
        self.tuples.iter().flatten().all(|&v| v >= 0)
    }

    /// Sorted distinct values of one field.
    pub fn field_values(&self, field: &FieldName) -> Result<Vec<i64>, ReservoirError> {
        let idx = self
            .field_index(field)
            .ok_or_else(|| ReservoirError::UnknownField(field.clone()))?;
        let mut v: Vec<i64> = self.tuples.iter().map(|t| t[idx]).collect();
        v.sort_unstable();
        v.dedup();
        Ok(v)
    }

    /// Projection onto `fields`. Refuses when two distinct tuples would
    /// become one, since that changes how often the loop body runs.
    pub fn project(&self, fields: &[FieldName], source_name: &str) -> Result<Self, ReservoirError> {
        let idx: Vec<usize> = fields
            .iter()
            .map(|f| {
                self.field_index(f)
                    .ok_or_else(|| ReservoirError::UnknownField(f.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut rows: Vec<(Vec<i64>, usize)> = self
            .tuples
            .iter()
            .enumerate()
            .map(|(n, t)| (idx.iter().map(|&i| t[i]).collect(), n))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(ReservoirError::AmbiguousProjection {
                source_name: source_name.to_string(),
                fields: fields.to_vec(),
                a: self.tuples[w[0].1].clone(),
                b: self.tuples[w[1].1].clone(),
            });
        }
        let bindings = self
            .bindings
            .iter()
            .map(|(k, col)| (k.clone(), rows.iter().map(|(_, n)| col[*n]).collect()))
            .collect();
        Ok(TupleReservoir {
            schema: fields.to_vec(),
            lineage: rows.iter().map(|(_, n)| self.lineage[*n].clone()).collect(),
            tuples: rows.into_iter().map(|(t, _)| t).collect(),
            bindings,
        })
    }

    /// Equi-join with `right` on `left_field == right_field`. Right fields
    /// whose names collide with left fields are renamed `<right_name>_<field>`.
    pub fn join(
        &self,
        right: &TupleReservoir,
        right_name: &str,
        left_field: &FieldName,
        right_field: &FieldName,
    ) -> Result<Self, ReservoirError> {
        let li = self
            .field_index(left_field)
            .ok_or_else(|| ReservoirError::UnknownField(left_field.clone()))?;
        let ri = right
            .field_index(right_field)
            .ok_or_else(|| ReservoirError::UnknownField(right_field.clone()))?;
        let schema = joined_schema(&self.schema, &right.schema, right_name);
        let mut tuples = Vec::new();
        let mut lineage = Vec::new();
        let mut pairs = Vec::new();
        for (a, lt) in self.tuples.iter().enumerate() {
            for (b, rt) in right.tuples.iter().enumerate() {
                if lt[li] == rt[ri] {
                    let mut t = lt.clone();
                    t.extend_from_slice(rt);
                    tuples.push(t);
                    let mut l = self.lineage[a].clone();
                    l.extend_from_slice(&right.lineage[b]);
                    lineage.push(l);
                    pairs.push((a, b));
                }
            }
        }
        let mut bindings = BTreeMap::new();
        for (k, col) in &self.bindings {
            bindings.insert(k.clone(), pairs.iter().map(|(a, _)| col[*a]).collect());
        }
        for (k, col) in &right.bindings {
            bindings.insert(k.clone(), pairs.iter().map(|(_, b)| col[*b]).collect());
        }
        Ok(TupleReservoir {
            schema,
            tuples,
            bindings,
            lineage,
        })
    }
}

/// Schema of `left ⋈ right`: left fields, then right fields renamed on collision.
pub fn joined_schema(left: &[FieldName], right: &[FieldName], right_name: &str) -> Vec<FieldName> {
    let mut schema = left.to_vec();
    for f in right {
        if left.contains(f) {
            schema.push(FieldName::new(format!("{right_name}_{f}")));
        } else {
            schema.push(f.clone());
        }
    }
    schema
}

fn identity_lineage(source: u32, n: usize) -> Vec<Vec<TupleId>> {
    (0..n)
        .map(|i| {
            vec![TupleId {
                source,
                index: i as u32,
            }]
        })
        .collect()
}

fn check_schema(schema: &[FieldName]) -> Result<(), ReservoirError> {
    for (i, f) in schema.iter().enumerate() {
        if f.as_str().is_empty() {
            return Err(ReservoirError::EmptyField);
        }
        if schema[..i].contains(f) {
            return Err(ReservoirError::DuplicateField(f.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(names: &[&str]) -> Vec<FieldName> {
        names.iter().map(|n| FieldName::new(*n)).collect()
    }

    #[test]
    fn rejects_duplicate_tuples() {
        let err = TupleReservoir::new(schema(&["row", "col"]), vec![vec![1, 2], vec![1, 2]]);
        assert_eq!(err, Err(ReservoirError::DuplicateTuple(vec![1, 2])));
    }

    #[test]
    fn rejects_bad_schema_and_arity() {
        assert!(matches!(
            TupleReservoir::new(schema(&["a", "a"]), vec![]),
            Err(ReservoirError::DuplicateField(_))
        ));
        assert!(matches!(
            TupleReservoir::new(schema(&["a", "b"]), vec![vec![1]]),
            Err(ReservoirError::Arity { .. })
        ));
    }

    #[test]
    fn tuples_are_sorted_and_bindings_follow() {
        let r = TupleReservoir::build(
            schema(&["row", "col"]),
            &["A"],
            vec![(vec![2, 0], vec![2.0]), (vec![0, 1], vec![1.0])],
        )
        .unwrap();
        assert_eq!(r.tuples(), &[vec![0, 1], vec![2, 0]]);
        assert_eq!(r.binding("A").unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn projection_collapsing_tuples_is_an_error() {
        let r = TupleReservoir::build(
            schema(&["field1", "field2", "field3"]),
            &["A"],
            vec![(vec![1, 2, 0], vec![1.0]), (vec![1, 2, 5], vec![2.0])],
        )
        .unwrap();
        let err = r.project(&schema(&["field1", "field2"]), "T").unwrap_err();
        assert!(matches!(err, ReservoirError::AmbiguousProjection { .. }));
        let ok = r.project(&schema(&["field1", "field3"]), "T").unwrap();
        assert_eq!(ok.len(), 2);
    }

    #[test]
    fn join_matches_nested_loop_oracle() {
        let t = TupleReservoir::build(
            schema(&["a"]),
            &["A"],
            vec![(vec![1], vec![10.0]), (vec![2], vec![20.0])],
        )
        .unwrap();
        let r = TupleReservoir::build(schema(&["b"]), &["B"], vec![(vec![2], vec![7.0])])
            .unwrap()
            .with_source_id(1);
        let j = t.join(&r, "R", &"a".into(), &"b".into()).unwrap();
        assert_eq!(j.tuples(), &[vec![2, 2]]);
        assert_eq!(j.binding("A").unwrap(), &[20.0]);
        assert_eq!(j.binding("B").unwrap(), &[7.0]);
        assert_eq!(j.lineage(0).len(), 2);
    }
}
