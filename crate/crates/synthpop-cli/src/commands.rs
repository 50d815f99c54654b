//! The four pipeline commands: synth, validate, errmap, check.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use serde_json::json;

use synthpop::privacy::{error_map, error_map_to_csv, flagged_to_csv};
use synthpop::schema::{
    build_predicate_space, geo_parent, parse_schema, AttributeSchema, GeoId, GeoLevel,
    Predicate, PredicateSpace,
};
use synthpop::solver::{solve_all, solver_summary_csv, SolveAllResult};
use synthpop::synthesis::{counts_of, expand, persons_from_csv, persons_to_csv};
use synthpop::tables::{check_consistency, load_tables, CensusTable};
use synthpop::validation::{
    default_groups, external_validate, internal_validate, microdata_from_csv, report_to_csv,
    scatter_to_csv, spearman_r, GroupResult,
};

use crate::config::{LoadedConfig, LogLevel};

pub struct Inputs {
    pub schema: AttributeSchema,
    pub space: PredicateSpace,
    pub tables: Vec<CensusTable>,
}

pub fn load_inputs(cfg: &LoadedConfig) -> Result<Inputs> {
    let schema_text = std::fs::read_to_string(&cfg.run.schema_path)
        .with_context(|| format!("reading schema file {}", cfg.run.schema_path.display()))?;
    let schema = parse_schema(&schema_text)
        .with_context(|| format!("in schema file {}", cfg.run.schema_path.display()))?;
    let space = build_predicate_space(&schema)?;
    let tables_text = std::fs::read_to_string(&cfg.run.tables_path)
        .with_context(|| format!("reading tables file {}", cfg.run.tables_path.display()))?;
    let tables = load_tables(&tables_text, &schema)
        .with_context(|| format!("in tables file {}", cfg.run.tables_path.display()))?;
    Ok(Inputs {
        schema,
        space,
        tables,
    })
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Every command records what it did: config hash, effective seeds, crate
/// version, and the files it wrote. No timestamps or absolute paths, so
/// reruns with the same config produce identical manifests.
fn write_manifest(
    cfg: &LoadedConfig,
    command: &str,
    outputs: &[&str],
    extra: serde_json::Value,
) -> Result<()> {
    let mut manifest = json!({
        "command": command,
        "config_hash": cfg.hash,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    if let (Some(obj), Some(extra)) = (manifest.as_object_mut(), extra.as_object()) {
        for (k, v) in extra {
            obj.insert(k.clone(), v.clone());
        }
    }
    let name = format!("{command}_manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_output(&cfg.run.output_dir, &name, &(text + "\n"))
}

fn warn_on_inconsistency(cfg: &LoadedConfig, tables: &[CensusTable]) {
    let report = check_consistency(tables);
    if !report.is_consistent() {
        cfg.log(
            LogLevel::Info,
            &format!(
                "warning: tables disagree on {} block totals (max discrepancy {}); \
                 an exact fit is impossible",
                report.inconsistencies.len(),
                report.max_discrepancy
            ),
        );
    }
}

pub fn cmd_synth(cfg: &LoadedConfig, seed: Option<u64>, require_exact: bool) -> Result<u8> {
    let inputs = load_inputs(cfg)?;
    let mut solve_cfg = cfg.run.solve.clone();
    if let Some(seed) = seed {
        solve_cfg.rng_seed = seed;
    }
    warn_on_inconsistency(cfg, &inputs.tables);
    let SolveAllResult {
        counts,
        summaries,
        total_objective,
    } = solve_all(&inputs.tables, &inputs.space, &inputs.schema, &solve_cfg)?;
    let people = expand(&counts, &inputs.space, &inputs.schema);
    cfg.log(
        LogLevel::Info,
        &format!(
            "fitted {} blocks with total objective {total_objective}; expanded {} person records",
            counts.blocks().len(),
            people.len()
        ),
    );
    write_output(
        &cfg.run.output_dir,
        "persons.csv",
        &persons_to_csv(&people, &inputs.schema),
    )?;
    write_output(
        &cfg.run.output_dir,
        "solver_summary.csv",
        &solver_summary_csv(&summaries),
    )?;
    write_manifest(
        cfg,
        "synth",
        &["persons.csv", "solver_summary.csv"],
        json!({"seed": solve_cfg.rng_seed, "require_exact": require_exact}),
    )?;
    let non_converged = summaries.iter().filter(|s| !s.converged_to_zero).count();
    if require_exact && non_converged > 0 {
        cfg.log(
            LogLevel::Quiet,
            &format!("{non_converged} block(s) did not reach an exact fit"),
        );
        return Ok(2);
    }
    Ok(0)
}

pub fn cmd_validate(
    cfg: &LoadedConfig,
    persons_path: &Path,
    microdata_path: Option<&Path>,
    county: Option<&str>,
    keep_scatter: bool,
) -> Result<u8> {
    let inputs = load_inputs(cfg)?;
    let persons_text = std::fs::read_to_string(persons_path)
        .with_context(|| format!("reading persons file {}", persons_path.display()))?;
    let people = persons_from_csv(&persons_text, &inputs.schema)
        .with_context(|| format!("in persons file {}", persons_path.display()))?;
    let x = counts_of(&people, inputs.tables[0].blocks(), &inputs.space)?;
    let groups = match &cfg.run.validation_groups {
        Some(groups) => groups.clone(),
        None => default_groups(&inputs.tables, &inputs.schema),
    };
    let mut report = internal_validate(
        &x,
        &inputs.tables,
        &inputs.space,
        &inputs.schema,
        &groups,
        keep_scatter,
    )?;
    for g in &report.groups {
        match g.r {
            Some(r) => cfg.log(LogLevel::Info, &format!("internal {}: r = {r}", g.name)),
            None => cfg.log(LogLevel::Info, &format!("internal {}: degenerate", g.name)),
        }
    }

    if let Some(md_path) = microdata_path {
        let md_text = std::fs::read_to_string(md_path)
            .with_context(|| format!("reading microdata file {}", md_path.display()))?;
        let sample = microdata_from_csv(&md_text, &inputs.schema)
            .with_context(|| format!("in microdata file {}", md_path.display()))?;
        let county = resolve_county(county, &people, &inputs.schema)?;
        let r = external_validate(&people, &sample, &county, &inputs.space, &inputs.schema)?;
        cfg.log(
            LogLevel::Info,
            &format!("external county {}: r = {r}", county.code()),
        );
        report.groups.push(GroupResult {
            name: "external".to_string(),
            n_points: inputs.space.len(),
            r: Some(r),
        });
    }

    let mut outputs = vec!["validation_report.csv"];
    write_output(
        &cfg.run.output_dir,
        "validation_report.csv",
        &report_to_csv(&report),
    )?;
    if let Some(scatter) = &report.scatter {
        write_output(
            &cfg.run.output_dir,
            "validation_scatter.csv",
            &scatter_to_csv(scatter),
        )?;
        outputs.push("validation_scatter.csv");
    }
    write_manifest(cfg, "validate", &outputs, json!({}))?;
    Ok(0)
}

/// Use the given county, or infer it when every person lives in one county.
fn resolve_county(
    county: Option<&str>,
    people: &synthpop::synthesis::PersonTable,
    schema: &AttributeSchema,
) -> Result<GeoId> {
    if let Some(code) = county {
        return Ok(GeoId::new(code, GeoLevel::County)?);
    }
    let mut counties: Vec<GeoId> = Vec::new();
    for rec in people.records() {
        let c = geo_parent(&rec.block, GeoLevel::County, schema.geo())?;
        if !counties.contains(&c) {
            counties.push(c);
        }
    }
    match counties.len() {
        1 => Ok(counties.pop().unwrap()),
        0 => Err(anyhow!("persons file is empty; pass --county")),
        n => Err(anyhow!(
            "persons span {n} counties; pass --county to pick one"
        )),
    }
}

pub fn cmd_errmap(
    cfg: &LoadedConfig,
    target: &str,
    epsilon: Option<f64>,
    runs: Option<u32>,
    seed: Option<u64>,
) -> Result<u8> {
    let inputs = load_inputs(cfg)?;
    let target = Predicate::parse(target, &inputs.schema)
        .with_context(|| format!("parsing target predicate {target:?}"))?;
    let mut dp = cfg.run.dp.clone();
    if let Some(e) = epsilon {
        dp.epsilon = e;
    }
    if let Some(r) = runs {
        dp.runs = r;
    }
    if let Some(s) = seed {
        dp.seed = s;
    }
    let map = error_map(&inputs.tables, &target, &dp, &inputs.schema)?;

    let mut smapes: Vec<f64> = map.rows.iter().map(|r| r.smape).collect();
    smapes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if smapes.is_empty() {
        println!("no tracts with usable percentages");
    } else {
        let median = if smapes.len() % 2 == 1 {
            smapes[smapes.len() / 2]
        } else {
            (smapes[smapes.len() / 2 - 1] + smapes[smapes.len() / 2]) / 2.0
        };
        println!(
            "smape over {} tracts: min {} median {median} max {}",
            smapes.len(),
            smapes[0],
            smapes[smapes.len() - 1]
        );
        let truth: Vec<f64> = map.rows.iter().map(|r| r.true_percentage).collect();
        let errors: Vec<f64> = map.rows.iter().map(|r| r.smape).collect();
        match spearman_r(&truth, &errors) {
            Ok(rho) => println!("rank correlation of true percentage vs smape: {rho}"),
            Err(_) => println!("rank correlation of true percentage vs smape: undefined"),
        }
    }

    write_output(&cfg.run.output_dir, "errmap.csv", &error_map_to_csv(&map))?;
    write_output(
        &cfg.run.output_dir,
        "errmap_flagged.csv",
        &flagged_to_csv(&map),
    )?;
    write_manifest(
        cfg,
        "errmap",
        &["errmap.csv", "errmap_flagged.csv"],
        json!({
            "target": target.render(&inputs.schema),
            "epsilon": dp.epsilon,
            "runs": dp.runs,
            "seed": dp.seed,
        }),
    )?;
    Ok(0)
}

pub fn cmd_check(cfg: &LoadedConfig) -> Result<u8> {
    let inputs = load_inputs(cfg)?;
    let report = check_consistency(&inputs.tables);
    for (table, totals) in &report.block_totals {
        let total: i64 = totals.iter().sum();
        println!("table {table}: {} blocks, total count {total}", totals.len());
    }
    if report.is_consistent() {
        println!("tables are consistent: every table implies the same block totals");
    } else {
        println!(
            "{} inconsistent block/table pairs, max discrepancy {}",
            report.inconsistencies.len(),
            report.max_discrepancy
        );
        for inc in report.inconsistencies.iter().take(50) {
            println!(
                "block {}: {} vs {} differ by {}",
                inc.block.code(),
                inc.table_a,
                inc.table_b,
                inc.discrepancy
            );
        }
        if report.inconsistencies.len() > 50 {
            println!("... and {} more", report.inconsistencies.len() - 50);
        }
    }
    write_manifest(cfg, "check", &[], json!({}))?;
    Ok(0)
}
