//! Differential-privacy perturbation of block-level tables and the per-tract
//! error map it induces on derived percentages.
//!
//! Noise is the two-sided geometric distribution P(Z = z) proportional to
//! exp(-epsilon * |z|), the discrete analogue of the Laplace mechanism. Each
//! cell draws from its own counter-based stream keyed by
//! (seed, run, table, predicate row, block), so a run is reproducible and
//! independent of evaluation order. After a one-time conversion of
//! exp(-epsilon) to 64-bit fixed point, sampling is integer-only.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::{counter_draw, fnv1a64, Stream};
use crate::schema::{geo_parent, AttributeSchema, GeoId, GeoLevel, Predicate};
use crate::tables::CensusTable;

/// Smallest accepted epsilon; below this the inverse-CDF walk (expected
/// length ~ 1/epsilon) stops being practical.
pub const MIN_EPSILON: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonnegativityFix {
    /// Perturbed cells below zero are set to zero.
    Clamp,
    /// Perturbed cells are left as drawn and may be negative.
    None,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub epsilon: f64,
    pub runs: u32,
    pub seed: u64,
    pub nonnegativity_fix: NonnegativityFix,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            runs: 50,
            seed: 0,
            nonnegativity_fix: NonnegativityFix::Clamp,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < MIN_EPSILON {
            return Err(Error::Config(format!(
                "epsilon must be a finite value >= {MIN_EPSILON}, got {}",
                self.epsilon
            )));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sampler for the two-sided geometric distribution
/// P(Z = z) = (1 - a)/(1 + a) * a^|z| with a = exp(-epsilon).
///
/// A single uniform 64-bit draw is inverted through the CDF; the thresholds
/// are held in 64-bit fixed point and updated by integer multiplication, so
/// the draw path never touches floating point.
#[derive(Clone, Debug)]
pub struct TwoSidedGeometric {
    alpha_fp: u128,
    p_zero_fp: u128,
    max_magnitude: i64,
}

impl TwoSidedGeometric {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < MIN_EPSILON {
            return Err(Error::Config(format!(
                "epsilon must be a finite value >= {MIN_EPSILON}, got {epsilon}"
            )));
        }
        let scale = 2f64.powi(64);
        let alpha = (-epsilon).exp();
        let alpha_fp = ((alpha * scale).round() as u128).min((1u128 << 64) - 1);
        let p_zero = (1.0 - alpha) / (1.0 + alpha);
        let p_zero_fp = ((p_zero * scale).round() as u128).clamp(1, 1u128 << 64);
        // Beyond this magnitude the per-step mass falls under the fixed-point
        // resolution of 2^-64.
        let max_magnitude = (64.0 * std::f64::consts::LN_2 / epsilon).ceil() as i64 + 2;
        Ok(Self {
            alpha_fp,
            p_zero_fp,
            max_magnitude,
        })
    }

    /// Mean 0; variance 2a/(1-a)^2.
    pub fn variance(&self) -> f64 {
        let a = self.alpha_fp as f64 / 2f64.powi(64);
        2.0 * a / ((1.0 - a) * (1.0 - a))
    }

    /// Invert the CDF at the uniform point `u`, walking outcomes in the
    /// order 0, +1, -1, +2, -2, ...
    pub fn sample_from(&self, u: u64) -> i64 {
        let u = u as u128;
        let mut cdf = self.p_zero_fp;
        if u < cdf {
            return 0;
        }
        let mut mass = self.p_zero_fp;
        for magnitude in 1..=self.max_magnitude {
            mass = (mass * self.alpha_fp) >> 64;
            if mass == 0 {
                return magnitude;
            }
            cdf += mass;
            if u < cdf {
                return magnitude;
            }
            cdf += mass;
            if u < cdf {
                return -magnitude;
            }
        }
        self.max_magnitude
    }

    pub fn sample(&self, rng: &mut Stream) -> i64 {
        self.sample_from(rng.next_u64())
    }
}

/// Draw one two-sided geometric value from a sequential stream.
/// Panics if `epsilon` is outside the accepted range; callers that need a
/// recoverable error should construct [`TwoSidedGeometric`] directly.
pub fn two_sided_geometric(epsilon: f64, rng: &mut Stream) -> i64 {
    TwoSidedGeometric::new(epsilon)
        .expect("epsilon validated by caller")
        .sample(rng)
}

/// Add independent geometric noise to every cell of every table.
/// Reproducible: the noise for a cell depends only on
/// (cfg.seed, run_index, table name, row, block code).
pub fn perturb_tables(
    tables: &[CensusTable],
    cfg: &DpConfig,
    run_index: u32,
) -> Result<Vec<CensusTable>> {
    cfg.validate()?;
    if run_index >= cfg.runs {
        return Err(Error::Config(format!(
            "run index {run_index} is out of range for {} runs",
            cfg.runs
        )));
    }
    let sampler = TwoSidedGeometric::new(cfg.epsilon)?;
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        let table_hash = fnv1a64(t.definition().name().as_bytes());
        let block_hashes: Vec<u64> = t
            .blocks()
            .iter()
            .map(|b| fnv1a64(b.code().as_bytes()))
            .collect();
        let mut values = t.values().clone();
        for i in 0..values.rows() {
            for (j, &block_hash) in block_hashes.iter().enumerate() {
                let u = counter_draw(
                    cfg.seed,
                    &[u64::from(run_index), table_hash, i as u64, block_hash],
                );
                let noisy = t.values().at(i, j) + sampler.sample_from(u);
                *values.at_mut(i, j) = match cfg.nonnegativity_fix {
                    NonnegativityFix::Clamp => noisy.max(0),
                    NonnegativityFix::None => noisy,
                };
            }
        }
        out.push(t.with_values(values));
    }
    Ok(out)
}

/// Percentages of a target predicate by ancestor area, plus the areas that
/// could not be computed because their total is not positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PercentageMap {
    pub values: BTreeMap<String, f64>,
    pub empty: Vec<String>,
}

/// Per-area percentage of the target predicate at the given geography level:
/// 100 * (sum of target counts) / (sum of totals), block counts aggregated
/// upward by code prefix. The counts come from the first table whose
/// attribute set covers the target predicate; that same table supplies the
/// totals.
pub fn tract_percentage(
    tables: &[CensusTable],
    target: &Predicate,
    level: GeoLevel,
    schema: &AttributeSchema,
) -> Result<PercentageMap> {
    let table = tables
        .iter()
        .find(|t| {
            target
                .assignments()
                .iter()
                .all(|(attr, _)| t.definition().attribute_subset().contains(attr))
        })
        .ok_or_else(|| {
            Error::Schema(format!(
                "no table covers every attribute of the target predicate {:?}",
                target.render(schema)
            ))
        })?;
    let target_rows: Vec<usize> = table
        .definition()
        .marginal_predicates()
        .iter()
        .enumerate()
        .filter(|(_, marginal)| target.is_subset_of(marginal))
        .map(|(i, _)| i)
        .collect();

    let mut sums: BTreeMap<String, (i64, i64)> = BTreeMap::new();
    for (j, block) in table.blocks().iter().enumerate() {
        let area = geo_parent(block, level, schema.geo())?;
        let entry = sums.entry(area.code().to_string()).or_insert((0, 0));
        entry.0 += target_rows.iter().map(|&i| table.values().at(i, j)).sum::<i64>();
        entry.1 += table.block_total(j);
    }
    let mut values = BTreeMap::new();
    let mut empty = Vec::new();
    for (area, (target_count, total)) in sums {
        if total > 0 {
            values.insert(area, 100.0 * target_count as f64 / total as f64);
        } else {
            empty.push(area);
        }
    }
    Ok(PercentageMap { values, empty })
}

/// Mean over runs of the symmetric absolute percentage error
/// 100 * |F - A| / ((|A| + |F|) / 2), with 0/0 taken as 0.
pub fn smape_per_tract(true_pct: f64, noisy_pcts: &[f64]) -> f64 {
    assert!(!noisy_pcts.is_empty(), "smape needs at least one run");
    let sum: f64 = noisy_pcts
        .iter()
        .map(|&f| {
            let denom = (true_pct.abs() + f.abs()) / 2.0;
            if denom == 0.0 {
                0.0
            } else {
                (f - true_pct).abs() / denom
            }
        })
        .sum();
    100.0 * sum / noisy_pcts.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMapRow {
    pub tract: GeoId,
    pub true_percentage: f64,
    pub smape: f64,
    /// Number of perturbed runs that produced a usable percentage.
    pub runs: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlaggedArea {
    pub tract: String,
    pub reason: String,
}

/// Per-tract SMAPE of the target percentage under repeated DP perturbation,
/// sorted by tract code.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub rows: Vec<ErrorMapRow>,
    pub flagged: Vec<FlaggedArea>,
}

/// Run the case-study pipeline: compute true tract percentages once, then
/// for each run perturb the tables, recompute, and average the symmetric
/// error per tract.
pub fn error_map(
    tables: &[CensusTable],
    target: &Predicate,
    cfg: &DpConfig,
    schema: &AttributeSchema,
) -> Result<ErrorMap> {
    cfg.validate()?;
    let truth = tract_percentage(tables, target, GeoLevel::Tract, schema)?;
    let per_run: Vec<PercentageMap> = (0..cfg.runs)
        .into_par_iter()
        .map(|run| {
            let perturbed = perturb_tables(tables, cfg, run)?;
            tract_percentage(&perturbed, target, GeoLevel::Tract, schema)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(truth.values.len());
    let mut flagged: Vec<FlaggedArea> = truth
        .empty
        .iter()
        .map(|code| FlaggedArea {
            tract: code.clone(),
            reason: "zero total in source tables".to_string(),
        })
        .collect();
    for (code, &true_pct) in &truth.values {
        let noisy: Vec<f64> = per_run
            .iter()
            .filter_map(|m| m.values.get(code).copied())
            .collect();
        if noisy.is_empty() {
            flagged.push(FlaggedArea {
                tract: code.clone(),
                reason: "zero total in every perturbed run".to_string(),
            });
            continue;
        }
        rows.push(ErrorMapRow {
            tract: GeoId::new(code.clone(), GeoLevel::Tract)?,
            true_percentage: true_pct,
            smape: smape_per_tract(true_pct, &noisy),
            runs: noisy.len() as u32,
        });
    }
    flagged.sort_by(|a, b| a.tract.cmp(&b.tract));
    Ok(ErrorMap { rows, flagged })
}

/// Render the error map CSV (`tract,true_percentage,smape,runs`).
pub fn error_map_to_csv(map: &ErrorMap) -> String {
    let mut out = String::from("tract,true_percentage,smape,runs\n");
    for row in &map.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.tract.code(),
            row.true_percentage,
            row.smape,
            row.runs
        ));
    }
    out
}

/// Render the companion CSV of excluded tracts (`tract,reason`).
pub fn flagged_to_csv(map: &ErrorMap) -> String {
    let mut out = String::from("tract,reason\n");
    for f in &map.flagged {
        out.push_str(&format!("{},{}\n", f.tract, f.reason));
    }
    out
}
