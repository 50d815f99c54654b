//! Internal (in-sample) and external (out-of-sample) validation of a fitted
//! population via Pearson correlation of corresponding count vectors.
//!
//! Internal validation compares the fitted counts, re-aggregated to table
//! form, against the observed tables, grouped so each group yields one
//! correlation. External validation compares full-predicate proportions of
//! the expanded population against an independent weighted microdata sample
//! at the county level.

use crate::error::{Error, Result};
use crate::schema::{geo_parent, AttributeSchema, GeoId, GeoLevel, PredicateSpace};
use crate::solver::CountsMatrix;
use crate::synthesis::PersonTable;
use crate::tables::{aggregate, build_query_matrix, CensusTable};

/// Pearson product-moment correlation. A constant vector (or fewer than two
/// points) has no defined correlation and is reported as a degenerate input
/// rather than a NaN.
pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "correlation inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "correlation needs at least 2 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mean_a = a.iter().sum::<f64>() / nf;
    let mean_b = b.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Degenerate(
            "correlation of a constant vector is undefined".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Spearman rank correlation: Pearson on average-ranked values.
pub fn spearman_r(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson_r(&ranks(a), &ranks(b))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            out[t] = avg_rank;
        }
        i = j + 1;
    }
    out
}

/// A named set of tables whose (predicate, block) cells are pooled into one
/// correlation.
#[derive(Clone, Debug, PartialEq, Eq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub tables: Vec<String>,
}

/// Default grouping: one group per attribute subset, in order of first
/// appearance. Mirrors the by-attribute-combination reading of the
/// "four groups" report.
pub fn default_groups(tables: &[CensusTable], schema: &AttributeSchema) -> Vec<GroupSpec> {
    let mut groups: Vec<(Vec<usize>, GroupSpec)> = Vec::new();
    for t in tables {
        let subset = t.definition().attribute_subset().to_vec();
        match groups.iter_mut().find(|(s, _)| *s == subset) {
            Some((_, g)) => g.tables.push(t.definition().name().to_string()),
            None => {
                let name = if subset.is_empty() {
                    "total".to_string()
                } else {
                    subset
                        .iter()
                        .map(|&a| schema.attributes()[a].name())
                        .collect::<Vec<_>>()
                        .join("x")
                };
                groups.push((
                    subset,
                    GroupSpec {
                        name,
                        tables: vec![t.definition().name().to_string()],
                    },
                ));
            }
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

/// Correlation outcome for one group; `r` is `None` when the comparison is
/// degenerate (constant vector).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupResult {
    pub name: String,
    pub n_points: usize,
    pub r: Option<f64>,
}

/// One retained scatter pair: a synthetic count and the observed count it
/// is compared to.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterPoint {
    pub group: String,
    pub synthetic: i64,
    pub observed: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub groups: Vec<GroupResult>,
    pub overall: GroupResult,
    pub scatter: Option<Vec<ScatterPoint>>,
}

/// Compare the fitted counts against the tables they were fitted to. Each
/// group pools its tables' (predicate, block) cells into paired vectors and
/// reports one correlation; degenerate groups are reported, not fatal.
pub fn internal_validate(
    x: &CountsMatrix,
    tables: &[CensusTable],
    space: &PredicateSpace,
    schema: &AttributeSchema,
    groups: &[GroupSpec],
    keep_scatter: bool,
) -> Result<ValidationReport> {
    if tables.is_empty() {
        return Err(Error::Format("no tables to validate against".into()));
    }
    if x.blocks() != tables[0].blocks() {
        return Err(Error::Dimension(
            "counts matrix and tables cover different block lists".into(),
        ));
    }
    let mut pairs_by_table: Vec<(String, Vec<(i64, i64)>)> = Vec::new();
    for t in tables {
        let w = build_query_matrix(t.definition(), space, schema)?;
        let agg = aggregate(&w, x.values())?;
        let mut pairs = Vec::with_capacity(agg.rows() * agg.cols());
        for i in 0..agg.rows() {
            for j in 0..agg.cols() {
                pairs.push((agg.at(i, j), t.values().at(i, j)));
            }
        }
        pairs_by_table.push((t.definition().name().to_string(), pairs));
    }

    let mut scatter = keep_scatter.then(Vec::new);
    let mut group_results = Vec::with_capacity(groups.len());
    for g in groups {
        let mut synth = Vec::new();
        let mut observed = Vec::new();
        for name in &g.tables {
            let (_, pairs) = pairs_by_table
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Config(format!("group {:?} names unknown table {name:?}", g.name)))?;
            for &(s, o) in pairs {
                synth.push(s as f64);
                observed.push(o as f64);
                if let Some(sc) = scatter.as_mut() {
                    sc.push(ScatterPoint {
                        group: g.name.clone(),
                        synthetic: s,
                        observed: o,
                    });
                }
            }
        }
        let r = match pearson_r(&synth, &observed) {
            Ok(r) => Some(r),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        group_results.push(GroupResult {
            name: g.name.clone(),
            n_points: synth.len(),
            r,
        });
    }

    let mut all_synth = Vec::new();
    let mut all_observed = Vec::new();
    for (_, pairs) in &pairs_by_table {
        for &(s, o) in pairs {
            all_synth.push(s as f64);
            all_observed.push(o as f64);
        }
    }
    let overall_r = match pearson_r(&all_synth, &all_observed) {
        Ok(r) => Some(r),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ValidationReport {
        groups: group_results,
        overall: GroupResult {
            name: "overall".to_string(),
            n_points: all_synth.len(),
            r: overall_r,
        },
        scatter,
    })
}

/// An external individual-level sample (one county), with optional
/// sampling weights.
#[derive(Clone, Debug, PartialEq)]
pub struct MicrodataSample {
    records: Vec<MicroRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroRecord {
    pub weight: f64,
    labels: Vec<usize>,
}

impl MicrodataSample {
    pub fn records(&self) -> &[MicroRecord] {
        &self.records
    }

    pub fn from_records(records: Vec<(f64, Vec<usize>)>) -> Result<Self> {
        for (w, _) in &records {
            if w.is_nan() || *w < 0.0 {
                return Err(Error::Format(format!("negative sampling weight {w}")));
            }
        }
        Ok(Self {
            records: records
                .into_iter()
                .map(|(weight, labels)| MicroRecord { weight, labels })
                .collect(),
        })
    }
}

impl MicroRecord {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Parse a microdata CSV: `weight,<attr...>` in schema order. The weight
/// column may be omitted, in which case every record has weight 1.
pub fn microdata_from_csv(text: &str, schema: &AttributeSchema) -> Result<MicrodataSample> {
    let attr_header = schema
        .attributes()
        .iter()
        .map(|a| a.name())
        .collect::<Vec<_>>()
        .join(",");
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("microdata file is empty".into()))?
        .1
        .trim_end_matches('\r');
    let has_weight = if header == format!("weight,{attr_header}") {
        true
    } else if header == attr_header {
        false
    } else {
        return Err(Error::Parse(format!(
            "microdata header must be {:?} (weight optional), got {header:?}",
            format!("weight,{attr_header}")
        )));
    };
    let d = schema.attribute_count();
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected_len = d + usize::from(has_weight);
        if fields.len() != expected_len {
            return Err(Error::Format(format!(
                "line {line_no}: expected {expected_len} fields, got {}",
                fields.len()
            )));
        }
        let weight = if has_weight {
            let w: f64 = fields[0].parse().map_err(|_| {
                Error::Parse(format!("line {line_no}: bad weight {:?}", fields[0]))
            })?;
            if w.is_nan() || w < 0.0 {
                return Err(Error::Format(format!(
                    "line {line_no}: negative weight {w}"
                )));
            }
            w
        } else {
            1.0
        };
        let offset = usize::from(has_weight);
        let mut labels = Vec::with_capacity(d);
        for attr in 0..d {
            let label = fields[offset + attr];
            let label_idx = schema.label_index(attr, label).ok_or_else(|| {
                Error::Schema(format!(
                    "line {line_no}: unknown label {label:?} for attribute {:?}",
                    schema.attributes()[attr].name()
                ))
            })?;
            labels.push(label_idx);
        }
        records.push(MicroRecord { weight, labels });
    }
    Ok(MicrodataSample { records })
}

/// County-level comparison against an external sample: both datasets are
/// reduced to full-predicate count vectors, normalized to proportions of
/// their own (weighted) totals, and correlated.
pub fn external_validate(
    people: &PersonTable,
    sample: &MicrodataSample,
    county: &GeoId,
    space: &PredicateSpace,
    schema: &AttributeSchema,
) -> Result<f64> {
    if county.level() != GeoLevel::County {
        return Err(Error::Geo(format!(
            "external validation needs a county identifier, got a {}",
            county.level().name()
        )));
    }
    let mut pop = vec![0.0f64; space.len()];
    let mut pop_total = 0.0f64;
    for rec in people.records() {
        let parent = geo_parent(&rec.block, GeoLevel::County, schema.geo())?;
        if parent.code() == county.code() {
            pop[space.index_of_labels(rec.labels())] += 1.0;
            pop_total += 1.0;
        }
    }
    if pop_total == 0.0 {
        return Err(Error::Geo(format!(
            "no person records in county {}",
            county.code()
        )));
    }
    let mut sam = vec![0.0f64; space.len()];
    let mut sam_total = 0.0f64;
    for rec in sample.records() {
        sam[space.index_of_labels(rec.labels())] += rec.weight;
        sam_total += rec.weight;
    }
    if sam_total == 0.0 {
        return Err(Error::Geo("microdata sample has zero total weight".into()));
    }
    for v in pop.iter_mut() {
        *v /= pop_total;
    }
    for v in sam.iter_mut() {
        *v /= sam_total;
    }
    pearson_r(&pop, &sam)
}

/// Render the validation report CSV (`group,n_points,r`), overall row last.
/// Degenerate groups carry the literal value `degenerate`.
pub fn report_to_csv(report: &ValidationReport) -> String {
    let mut out = String::from("group,n_points,r\n");
    for g in report.groups.iter().chain(std::iter::once(&report.overall)) {
        let r = match g.r {
            Some(v) => format!("{v}"),
            None => "degenerate".to_string(),
        };
        out.push_str(&format!("{},{},{}\n", g.name, g.n_points, r));
    }
    out
}

/// Render retained scatter pairs (`group,synthetic,observed`).
pub fn scatter_to_csv(scatter: &[ScatterPoint]) -> String {
    let mut out = String::from("group,synthetic,observed\n");
    for p in scatter {
        out.push_str(&format!("{},{},{}\n", p.group, p.synthetic, p.observed));
    }
    out
}
