//! Expansion of a fitted counts matrix into individual person records, and
//! re-summarization of person tables back into count matrices.
//!
//! Record order is fixed (block-major, then predicate, then repetition) and
//! ids are assigned sequentially from zero, so the persons file is byte
//! stable for a given counts matrix.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schema::{AttributeSchema, GeoId, GeoLevel, PredicateSpace};
use crate::solver::CountsMatrix;
use crate::tables::TableDefinition;

/// One synthetic individual: a block and one label per schema attribute.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PersonRecord {
    pub person_id: u64,
    pub block: GeoId,
    labels: Vec<usize>,
}

impl PersonRecord {
    /// Label indices in schema attribute order.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_name<'a>(&self, attr: usize, schema: &'a AttributeSchema) -> &'a str {
        &schema.attributes()[attr].labels()[self.labels[attr]]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PersonTable {
    records: Vec<PersonRecord>,
}

impl PersonTable {
    pub fn records(&self) -> &[PersonRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Emit exactly `x_kj` records with predicate `k`'s labels in block `j`.
pub fn expand(x: &CountsMatrix, space: &PredicateSpace, _schema: &AttributeSchema) -> PersonTable {
    let mut records = Vec::with_capacity(x.total().max(0) as usize);
    let mut person_id = 0u64;
    for (j, block) in x.blocks().iter().enumerate() {
        for k in 0..x.num_full() {
            let count = x.values().at(k, j);
            if count == 0 {
                continue;
            }
            let labels = space.labels_of(k);
            for _ in 0..count {
                records.push(PersonRecord {
                    person_id,
                    block: block.clone(),
                    labels: labels.clone(),
                });
                person_id += 1;
            }
        }
    }
    PersonTable { records }
}

/// Tally person records back into a counts matrix over the given block list.
/// Blocks absent from the list are an error; blocks without records keep a
/// zero column.
pub fn counts_of(
    people: &PersonTable,
    blocks: &[GeoId],
    space: &PredicateSpace,
) -> Result<CountsMatrix> {
    let index: std::collections::HashMap<&GeoId, usize> =
        blocks.iter().enumerate().map(|(j, b)| (b, j)).collect();
    let mut values = Matrix::zeros(space.len(), blocks.len());
    for rec in &people.records {
        let j = *index.get(&rec.block).ok_or_else(|| {
            Error::Geo(format!(
                "person {} is in block {}, which is not in the block list",
                rec.person_id,
                rec.block.code()
            ))
        })?;
        let k = space.index_of_labels(&rec.labels);
        *values.at_mut(k, j) += 1;
    }
    CountsMatrix::new(values, blocks.to_vec())
}

/// Tally person records directly into table form, one matrix per definition.
/// This walks the records themselves rather than going through a counts
/// matrix, so it can be cross-checked against `aggregate`.
pub fn summarize(
    people: &PersonTable,
    defs: &[TableDefinition],
    blocks: &[GeoId],
    schema: &AttributeSchema,
) -> Result<Vec<Matrix>> {
    let index: std::collections::HashMap<&GeoId, usize> =
        blocks.iter().enumerate().map(|(j, b)| (b, j)).collect();
    let mut out: Vec<Matrix> = defs
        .iter()
        .map(|d| Matrix::zeros(d.marginal_predicates().len(), blocks.len()))
        .collect();
    for rec in &people.records {
        let j = *index.get(&rec.block).ok_or_else(|| {
            Error::Geo(format!(
                "person {} is in block {}, which is not in the block list",
                rec.person_id,
                rec.block.code()
            ))
        })?;
        for (d, def) in defs.iter().enumerate() {
            let row = def.row_of_labels(&rec.labels, schema);
            *out[d].at_mut(row, j) += 1;
        }
    }
    Ok(out)
}

/// Render the persons CSV: `person_id,block,<attr...>` in schema order.
pub fn persons_to_csv(people: &PersonTable, schema: &AttributeSchema) -> String {
    let mut out = String::from("person_id,block");
    for attr in schema.attributes() {
        out.push(',');
        out.push_str(attr.name());
    }
    out.push('\n');
    for rec in &people.records {
        out.push_str(&format!("{},{}", rec.person_id, rec.block.code()));
        for attr in 0..schema.attribute_count() {
            out.push(',');
            out.push_str(rec.label_name(attr, schema));
        }
        out.push('\n');
    }
    out
}

/// Parse a persons CSV produced by `persons_to_csv`.
pub fn persons_from_csv(text: &str, schema: &AttributeSchema) -> Result<PersonTable> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("persons file is empty".into()))?
        .1
        .trim_end_matches('\r');
    let mut expected = String::from("person_id,block");
    for attr in schema.attributes() {
        expected.push(',');
        expected.push_str(attr.name());
    }
    if header != expected {
        return Err(Error::Parse(format!(
            "persons file header must be {expected:?}, got {header:?}"
        )));
    }
    let d = schema.attribute_count();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + d {
            return Err(Error::Format(format!(
                "line {line_no}: expected {} fields, got {}",
                2 + d,
                fields.len()
            )));
        }
        let person_id: u64 = fields[0].parse().map_err(|_| {
            Error::Parse(format!("line {line_no}: bad person_id {:?}", fields[0]))
        })?;
        let block = GeoId::new(fields[1], GeoLevel::Block)
            .map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
        let mut labels = Vec::with_capacity(d);
        for attr in 0..d {
            let label = fields[2 + attr];
            let label_idx = schema.label_index(attr, label).ok_or_else(|| {
                Error::Schema(format!(
                    "line {line_no}: unknown label {label:?} for attribute {:?}",
                    schema.attributes()[attr].name()
                ))
            })?;
            labels.push(label_idx);
        }
        records.push(PersonRecord {
            person_id,
            block,
            labels,
        });
    }
    Ok(PersonTable { records })
}
