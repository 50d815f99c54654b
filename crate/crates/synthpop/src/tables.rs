//! Census-style tables, the query matrices that aggregate full-predicate
//! counts into them, and a cross-table consistency check.
//!
//! A table's marginal predicates always enumerate the complete Cartesian
//! product over its attribute subset, so the marginal rows partition the
//! full-predicate space: every full predicate is subsumed by exactly one row.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::schema::{AttributeSchema, GeoId, GeoLevel, Predicate, PredicateSpace};

/// A table layout: which attributes it crosses and its marginal predicates
/// in canonical order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableDefinition {
    name: String,
    attribute_subset: Vec<usize>,
    marginal_predicates: Vec<Predicate>,
}

impl TableDefinition {
    /// Build a definition over the named attributes. An empty subset gives a
    /// totals-only table whose single marginal predicate is universal.
    pub fn new(name: impl Into<String>, attrs: &[&str], schema: &AttributeSchema) -> Result<Self> {
        let mut subset = Vec::with_capacity(attrs.len());
        for name in attrs {
            let idx = schema
                .attribute_index(name)
                .ok_or_else(|| Error::Schema(format!("unknown attribute {name:?} in table")))?;
            if subset.contains(&idx) {
                return Err(Error::Schema(format!(
                    "attribute {name:?} listed twice in table definition"
                )));
            }
            subset.push(idx);
        }
        subset.sort_unstable();
        Ok(Self::from_subset(name.into(), subset, schema))
    }

    pub(crate) fn from_subset(
        name: String,
        attribute_subset: Vec<usize>,
        schema: &AttributeSchema,
    ) -> Self {
        debug_assert!(attribute_subset.windows(2).all(|w| w[0] < w[1]));
        let sizes: Vec<usize> = attribute_subset
            .iter()
            .map(|&a| schema.attributes()[a].labels().len())
            .collect();
        let count: usize = sizes.iter().product();
        let mut marginals = Vec::with_capacity(count);
        for row in 0..count {
            let mut rem = row;
            let mut pairs = Vec::with_capacity(sizes.len());
            for pos in (0..sizes.len()).rev() {
                pairs.push((attribute_subset[pos], rem % sizes[pos]));
                rem /= sizes[pos];
            }
            pairs.reverse();
            let rendered: Vec<(&str, &str)> = pairs
                .iter()
                .map(|&(a, l)| {
                    (
                        schema.attributes()[a].name(),
                        schema.attributes()[a].labels()[l].as_str(),
                    )
                })
                .collect();
            marginals.push(Predicate::new(schema, &rendered).expect("labels come from schema"));
        }
        Self {
            name,
            attribute_subset,
            marginal_predicates: marginals,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Attribute indices this table crosses, ascending.
    pub fn attribute_subset(&self) -> &[usize] {
        &self.attribute_subset
    }

    pub fn marginal_predicates(&self) -> &[Predicate] {
        &self.marginal_predicates
    }

    /// Marginal row subsuming the full predicate with the given label vector.
    pub fn row_of_labels(&self, labels: &[usize], schema: &AttributeSchema) -> usize {
        let mut row = 0usize;
        for &a in &self.attribute_subset {
            row = row * schema.attributes()[a].labels().len() + labels[a];
        }
        row
    }

    /// Marginal row index of a predicate over exactly this subset.
    fn row_of_marginal(&self, p: &Predicate, schema: &AttributeSchema) -> Option<usize> {
        let assignments = p.assignments();
        if assignments.len() != self.attribute_subset.len() {
            return None;
        }
        let mut row = 0usize;
        for (&(attr, label), &want) in assignments.iter().zip(&self.attribute_subset) {
            if attr != want {
                return None;
            }
            row = row * schema.attributes()[attr].labels().len() + label;
        }
        Some(row)
    }
}

/// Observed counts for one table: marginal predicates as rows, blocks as
/// columns.
///
/// Tables read from disk are nonnegative; tables produced by the privacy
/// module can carry negative cells when the nonnegativity clamp is disabled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CensusTable {
    definition: TableDefinition,
    blocks: Vec<GeoId>,
    values: Matrix,
}

impl CensusTable {
    pub fn new(definition: TableDefinition, blocks: Vec<GeoId>, values: Matrix) -> Result<Self> {
        if values.rows() != definition.marginal_predicates().len() || values.cols() != blocks.len()
        {
            return Err(Error::Dimension(format!(
                "table {:?}: values are {}x{}, expected {}x{}",
                definition.name(),
                values.rows(),
                values.cols(),
                definition.marginal_predicates().len(),
                blocks.len()
            )));
        }
        Ok(Self {
            definition,
            blocks,
            values,
        })
    }

    pub fn definition(&self) -> &TableDefinition {
        &self.definition
    }

    pub fn blocks(&self) -> &[GeoId] {
        &self.blocks
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Total count in block column `j`.
    pub fn block_total(&self, j: usize) -> i64 {
        self.values.column_sum(j)
    }

    pub(crate) fn with_values(&self, values: Matrix) -> Self {
        Self {
            definition: self.definition.clone(),
            blocks: self.blocks.clone(),
            values,
        }
    }
}

/// Binary subsumption matrix for one table: rows are the table's marginal
/// predicates, columns are full predicates. Stored as the partition map
/// `row_of_full[k]` since every column has exactly one 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryMatrix {
    table: String,
    rows: usize,
    row_of_full: Vec<usize>,
}

impl QueryMatrix {
    pub fn table(&self) -> &str {
        &self.table
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of full predicates (columns).
    pub fn cols(&self) -> usize {
        self.row_of_full.len()
    }

    /// The marginal row whose predicate subsumes full predicate `k`.
    pub fn row_for(&self, k: usize) -> usize {
        self.row_of_full[k]
    }

    /// Entry w_ik.
    pub fn entry(&self, i: usize, k: usize) -> u8 {
        u8::from(self.row_of_full[k] == i)
    }
}

/// Build the query matrix of a table definition over a predicate space.
pub fn build_query_matrix(
    def: &TableDefinition,
    space: &PredicateSpace,
    schema: &AttributeSchema,
) -> Result<QueryMatrix> {
    for &a in def.attribute_subset() {
        if a >= schema.attribute_count() {
            return Err(Error::Schema(format!(
                "table {:?} references attribute index {a} outside the schema",
                def.name()
            )));
        }
    }
    let row_of_full = (0..space.len())
        .map(|k| def.row_of_labels(&space.labels_of(k), schema))
        .collect();
    Ok(QueryMatrix {
        table: def.name().to_string(),
        rows: def.marginal_predicates().len(),
        row_of_full,
    })
}

/// Premultiply: returns W·X, the table-form aggregation of the counts in `x`
/// (rows of `x` are full predicates, columns are blocks).
pub fn aggregate(w: &QueryMatrix, x: &Matrix) -> Result<Matrix> {
    if w.cols() != x.rows() {
        return Err(Error::Dimension(format!(
            "query matrix has {} columns but counts have {} rows",
            w.cols(),
            x.rows()
        )));
    }
    let mut out = Matrix::zeros(w.rows(), x.cols());
    for k in 0..x.rows() {
        let row = w.row_for(k);
        for j in 0..x.cols() {
            *out.at_mut(row, j) += x.at(k, j);
        }
    }
    Ok(out)
}

/// One disagreement between two tables' implied totals for a block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inconsistency {
    pub block: GeoId,
    pub table_a: String,
    pub table_b: String,
    pub discrepancy: i64,
}

/// Per-block totals per table plus every pairwise disagreement.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsistencyReport {
    /// `(table name, per-block totals)` in table order.
    pub block_totals: Vec<(String, Vec<i64>)>,
    pub max_discrepancy: i64,
    pub inconsistencies: Vec<Inconsistency>,
}

impl ConsistencyReport {
    /// True iff every table implies the same total for every block.
    pub fn is_consistent(&self) -> bool {
        self.inconsistencies.is_empty()
    }
}

/// Compare the block totals implied by each table. Report-only: inconsistent
/// tables are still solvable, the least-squares optimum just cannot be zero.
pub fn check_consistency(tables: &[CensusTable]) -> ConsistencyReport {
    let block_totals: Vec<(String, Vec<i64>)> = tables
        .iter()
        .map(|t| {
            let totals = (0..t.blocks().len()).map(|j| t.block_total(j)).collect();
            (t.definition().name().to_string(), totals)
        })
        .collect();
    let mut inconsistencies = Vec::new();
    let mut max_discrepancy = 0i64;
    if let Some(first) = tables.first() {
        for j in 0..first.blocks().len() {
            for a in 0..tables.len() {
                for b in a + 1..tables.len() {
                    let d = (block_totals[a].1[j] - block_totals[b].1[j]).abs();
                    if d > 0 {
                        max_discrepancy = max_discrepancy.max(d);
                        inconsistencies.push(Inconsistency {
                            block: first.blocks()[j].clone(),
                            table_a: block_totals[a].0.clone(),
                            table_b: block_totals[b].0.clone(),
                            discrepancy: d,
                        });
                    }
                }
            }
        }
    }
    ConsistencyReport {
        block_totals,
        max_discrepancy,
        inconsistencies,
    }
}

/// Parse the canonical tables CSV (`table,block,predicate,count`).
///
/// Tables appear in order of first appearance; blocks are sorted by code and
/// must be identical across tables. Every (marginal predicate, block) cell
/// must be present exactly once.
pub fn load_tables(text: &str, schema: &AttributeSchema) -> Result<Vec<CensusTable>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("tables file is empty".into()))?
        .1
        .trim_end_matches('\r');
    if header != "table,block,predicate,count" {
        return Err(Error::Parse(format!(
            "tables file header must be `table,block,predicate,count`, got {header:?}"
        )));
    }

    struct RawTable {
        rows: Vec<(usize, GeoId, Predicate, i64)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut raw: BTreeMap<String, RawTable> = BTreeMap::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!(
                "line {line_no}: expected 4 fields, got {}",
                fields.len()
            )));
        }
        let (table, block, predicate, count) = (fields[0], fields[1], fields[2], fields[3]);
        if table.is_empty() {
            return Err(Error::Format(format!("line {line_no}: empty table name")));
        }
        let count: i64 = count.parse().map_err(|_| {
            Error::Parse(format!("line {line_no}: count {count:?} is not an integer"))
        })?;
        if count < 0 {
            return Err(Error::Format(format!(
                "line {line_no}: negative count {count}"
            )));
        }
        let block = GeoId::new(block, GeoLevel::Block)
            .map_err(|e| Error::Format(format!("line {line_no}: {e}")))?;
        let predicate = Predicate::parse(predicate, schema)
            .map_err(|e| match e {
                Error::Schema(m) => Error::Schema(format!("line {line_no}: {m}")),
                other => Error::Parse(format!("line {line_no}: {other}")),
            })?;
        if !raw.contains_key(table) {
            order.push(table.to_string());
            raw.insert(table.to_string(), RawTable { rows: Vec::new() });
        }
        raw.get_mut(table)
            .unwrap()
            .rows
            .push((line_no, block, predicate, count));
    }
    if order.is_empty() {
        return Err(Error::Format("tables file contains no data rows".into()));
    }

    // Shared, sorted block list across all tables.
    let mut shared_blocks: Option<Vec<GeoId>> = None;
    let mut tables = Vec::with_capacity(order.len());
    for name in &order {
        let raw_table = &raw[name];
        let mut blocks: Vec<GeoId> = raw_table.rows.iter().map(|r| r.1.clone()).collect();
        blocks.sort();
        blocks.dedup();
        match &shared_blocks {
            None => shared_blocks = Some(blocks.clone()),
            Some(expected) => {
                if expected != &blocks {
                    return Err(Error::Format(format!(
                        "table {name:?} covers a different block set than table {:?}",
                        order[0]
                    )));
                }
            }
        }

        let subset: Vec<usize> = raw_table.rows[0]
            .2
            .assignments()
            .iter()
            .map(|&(a, _)| a)
            .collect();
        let def = TableDefinition::from_subset(name.clone(), subset, schema);
        let block_index: BTreeMap<&GeoId, usize> =
            blocks.iter().enumerate().map(|(j, b)| (b, j)).collect();

        let mut values = Matrix::zeros(def.marginal_predicates().len(), blocks.len());
        let mut filled = vec![false; def.marginal_predicates().len() * blocks.len()];
        for (line_no, block, predicate, count) in &raw_table.rows {
            let row = def.row_of_marginal(predicate, schema).ok_or_else(|| {
                Error::Format(format!(
                    "line {line_no}: predicate {:?} does not cover table {name:?}'s attribute set",
                    predicate.render(schema)
                ))
            })?;
            let col = block_index[block];
            let cell = row * blocks.len() + col;
            if filled[cell] {
                return Err(Error::Format(format!(
                    "line {line_no}: duplicate cell (table {name:?}, block {}, predicate {:?})",
                    block.code(),
                    predicate.render(schema)
                )));
            }
            filled[cell] = true;
            *values.at_mut(row, col) = *count;
        }
        if let Some(missing) = filled.iter().position(|&f| !f) {
            let row = missing / blocks.len();
            let col = missing % blocks.len();
            return Err(Error::Format(format!(
                "table {name:?} is missing the cell for predicate {:?} in block {}",
                def.marginal_predicates()[row].render(schema),
                blocks[col].code()
            )));
        }
        tables.push(CensusTable::new(def, blocks, values)?);
    }
    Ok(tables)
}

/// Render tables back to the canonical CSV form.
pub fn tables_to_csv(tables: &[CensusTable], schema: &AttributeSchema) -> String {
    let mut out = String::from("table,block,predicate,count\n");
    for t in tables {
        for (i, p) in t.definition().marginal_predicates().iter().enumerate() {
            for (j, b) in t.blocks().iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    t.definition().name(),
                    b.code(),
                    p.render(schema),
                    t.values().at(i, j)
                ));
            }
        }
    }
    out
}
