//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use synthpop::matrix::Matrix;
use synthpop::privacy::{error_map, DpConfig, NonnegativityFix, TwoSidedGeometric};
use synthpop::rng::Stream;
use synthpop::schema::{
    build_predicate_space, parse_schema, AttributeSchema, GeoId, GeoLevel, Predicate,
    PredicateSpace,
};
use synthpop::solver::{
    brute_force_block, solve_all, solve_block, total_objective, BlockProblem, CountsMatrix,
    DesignMatrix, SolveConfig,
};
use synthpop::synthesis::{counts_of, expand, summarize};
use synthpop::tables::{aggregate, build_query_matrix, CensusTable, TableDefinition};
use synthpop::validation::{
    default_groups, external_validate, internal_validate, spearman_r, MicrodataSample,
};

fn check(criterion: u32, description: &str, pass: bool, detail: &str) {
    if pass {
        println!("PASS criterion {criterion}: {description} ({detail})");
    } else {
        println!("FAIL criterion {criterion}: {description} ({detail})");
        panic!("criterion {criterion} failed: {detail}");
    }
}

fn toy_schema() -> AttributeSchema {
    parse_schema(
        r#"{
            "attributes": [
                {"name": "a", "labels": ["a0", "a1"]},
                {"name": "b", "labels": ["b0", "b1"]},
                {"name": "c", "labels": ["c0", "c1", "c2"]}
            ],
            "geo_prefix_lengths": {"county": 1, "tract": 2, "block_group": 3, "block": 4}
        }"#,
    )
    .unwrap()
}

fn blocks(n: usize) -> Vec<GeoId> {
    (0..n)
        .map(|j| GeoId::new(format!("{:04}", 1000 + j), GeoLevel::Block).unwrap())
        .collect()
}

/// Tables over each single attribute, aggregated from a hidden population.
fn marginal_tables_from(
    x: &Matrix,
    blocks: &[GeoId],
    schema: &AttributeSchema,
    space: &PredicateSpace,
) -> Vec<CensusTable> {
    ["a", "b", "c"]
        .iter()
        .map(|attr| {
            let def = TableDefinition::new(format!("by_{attr}"), &[attr], schema).unwrap();
            let w = build_query_matrix(&def, space, schema).unwrap();
            let values = aggregate(&w, x).unwrap();
            CensusTable::new(def, blocks.to_vec(), values).unwrap()
        })
        .collect()
}

/// A seeded instance for criteria 1/3/5: 10 blocks, K = 12, block totals
/// bounded well under 30.
fn toy_instance(seed: u64) -> (AttributeSchema, PredicateSpace, Vec<CensusTable>) {
    let schema = toy_schema();
    let space = build_predicate_space(&schema).unwrap();
    let bl = blocks(10);
    let mut stream = Stream::new(seed);
    let mut x = Matrix::zeros(space.len(), bl.len());
    for j in 0..bl.len() {
        for k in 0..space.len() {
            *x.at_mut(k, j) = stream.next_below(3) as i64;
        }
    }
    let tables = marginal_tables_from(&x, &bl, &schema, &space);
    (schema, space, tables)
}

#[test]
fn criterion_1_exact_fit_recovery() {
    let started = Instant::now();
    let mut exact = 0u32;
    for instance in 0..100u64 {
        let (schema, space, tables) = toy_instance(1000 + instance);
        let cfg = SolveConfig {
            rng_seed: instance,
            ..SolveConfig::default()
        };
        let out = solve_all(&tables, &space, &schema, &cfg).unwrap();
        if out.total_objective == 0 {
            exact += 1;
        }
    }
    let elapsed = started.elapsed();
    check(
        1,
        "exact-fit recovery on 100 seeded toy instances",
        exact >= 99 && elapsed.as_secs_f64() < 1.0,
        &format!("{exact}/100 exact, {:.3}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut stream = Stream::new(777);
    let mut equal = 0u32;
    let mut max_gap = 0u128;
    for instance in 0..100u64 {
        let k_count = 3 + (stream.next_below(4) as usize); // K in 3..=6
        let m = 2 + (stream.next_below(4) as usize);
        let rows: Vec<Vec<u8>> = (0..m)
            .map(|_| (0..k_count).map(|_| stream.next_below(2) as u8).collect())
            .collect();
        let design = Arc::new(DesignMatrix::from_binary_rows(&rows).unwrap());
        // A hidden solution with total at most 4 keeps the optimum inside
        // the brute-force region.
        let mut x_star = vec![0i64; k_count];
        let mut budget = 4i64;
        for slot in x_star.iter_mut() {
            let v = stream.next_below(budget as u64 + 1) as i64;
            *slot = v;
            budget -= v;
        }
        let mut y = vec![0i64; m];
        for (k, &v) in x_star.iter().enumerate() {
            for &i in design.column(k) {
                y[i] += v;
            }
        }
        let p = BlockProblem::new(
            design,
            y,
            GeoId::new("0000", GeoLevel::Block).unwrap(),
        )
        .unwrap();
        let oracle = brute_force_block(&p, 4).unwrap();
        let cfg = SolveConfig {
            rng_seed: instance,
            ..SolveConfig::default()
        };
        let res = solve_block(&p, &cfg).unwrap();
        assert!(
            res.objective >= oracle.objective,
            "heuristic beat exhaustive search on instance {instance}"
        );
        let gap = res.objective - oracle.objective;
        max_gap = max_gap.max(gap);
        if gap == 0 {
            equal += 1;
        }
    }
    check(
        2,
        "per-block heuristic matches the brute-force oracle",
        equal >= 90 && max_gap <= 2,
        &format!("{equal}/100 equal, max gap {max_gap}"),
    );
}

#[test]
fn criterion_3_internal_validation_is_exact() {
    let mut zero_objective_instances = 0u32;
    let mut groups_checked = 0u32;
    for instance in 0..20u64 {
        let (schema, space, tables) = toy_instance(3000 + instance);
        let out = solve_all(&tables, &space, &schema, &SolveConfig::default()).unwrap();
        if out.total_objective != 0 {
            continue;
        }
        zero_objective_instances += 1;
        let groups = default_groups(&tables, &schema);
        let report =
            internal_validate(&out.counts, &tables, &space, &schema, &groups, false).unwrap();
        for g in &report.groups {
            if let Some(r) = g.r {
                assert!(
                    (r - 1.0).abs() <= 1e-12,
                    "group {} reported r = {r} on an exact fit",
                    g.name
                );
                groups_checked += 1;
            }
        }
    }
    check(
        3,
        "every non-degenerate group reports r = 1 on exact fits",
        zero_objective_instances > 0,
        &format!("{groups_checked} groups over {zero_objective_instances} exact instances"),
    );
}

#[test]
fn criterion_4_external_validation_on_a_thinned_sample() {
    let schema = toy_schema();
    let space = build_predicate_space(&schema).unwrap();
    let bl = blocks(50);
    let mut stream = Stream::new(44);
    let mut values = Matrix::zeros(space.len(), bl.len());
    for j in 0..bl.len() {
        for k in 0..space.len() {
            // Cell scale ramps with the predicate index so the proportion
            // vector carries real signal.
            *values.at_mut(k, j) = stream.next_below(40 * (k as u64 + 1)) as i64;
        }
    }
    let x = CountsMatrix::new(values, bl).unwrap();
    let people = expand(&x, &space, &schema);
    assert!(
        people.len() >= 50_000,
        "fixture must expand to at least 50,000 records, got {}",
        people.len()
    );

    // Seeded 1% systematic thinning: every 100th record.
    let offset = (Stream::new(45).next_below(100)) as usize;
    let sample = MicrodataSample::from_records(
        people
            .records()
            .iter()
            .skip(offset)
            .step_by(100)
            .map(|r| (1.0, r.labels().to_vec()))
            .collect(),
    )
    .unwrap();
    let county = GeoId::new("1", GeoLevel::County).unwrap();
    let r = external_validate(&people, &sample, &county, &space, &schema).unwrap();
    check(
        4,
        "1% thinned sample of a 50k-record population correlates at county level",
        r >= 0.99,
        &format!("r = {r:.6} over {} records", people.len()),
    );
}

#[test]
fn criterion_5_separability_is_exact() {
    let mut checked = 0u32;
    for instance in 0..20u64 {
        let (schema, space, mut tables) = toy_instance(5000 + instance);
        // Half the fixtures are made inconsistent so nonzero objectives are
        // exercised too.
        if instance % 2 == 1 {
            let mut bumped = tables[0].values().clone();
            *bumped.at_mut(0, 0) += 3;
            *bumped.at_mut(1, 4) += 1;
            tables[0] = CensusTable::new(
                tables[0].definition().clone(),
                tables[0].blocks().to_vec(),
                bumped,
            )
            .unwrap();
        }
        let out = solve_all(&tables, &space, &schema, &SolveConfig::default()).unwrap();
        let per_block_sum: u128 = out.summaries.iter().map(|s| s.objective).sum();
        let recomputed = total_objective(&tables, &out.counts, &space, &schema).unwrap();
        assert_eq!(
            per_block_sum, recomputed,
            "instance {instance}: per-block sum {per_block_sum} vs recomputed {recomputed}"
        );
        assert_eq!(per_block_sum, out.total_objective);
        checked += 1;
    }
    check(
        5,
        "per-block objectives sum exactly to the full objective",
        checked == 20,
        &format!("{checked} fixtures, integer-exact"),
    );
}

#[test]
fn criterion_6_noise_mechanism_moments() {
    let sampler = TwoSidedGeometric::new(1.0).unwrap();
    let mut stream = Stream::new(606);
    let n = 100_000usize;
    let mut sum = 0i64;
    let mut sum_sq = 0i64;
    for _ in 0..n {
        let z = sampler.sample(&mut stream);
        sum += z;
        sum_sq += z * z;
    }
    let mean = sum as f64 / n as f64;
    let variance = sum_sq as f64 / n as f64 - mean * mean;
    let alpha = (-1.0f64).exp();
    let target = 2.0 * alpha / ((1.0 - alpha) * (1.0 - alpha));
    let mean_bound = 3.0 * target.sqrt() / (n as f64).sqrt();
    check(
        6,
        "two-sided geometric moments at epsilon 1",
        mean.abs() <= mean_bound && (variance - target).abs() <= 0.05 * target,
        &format!("mean {mean:.5} (bound {mean_bound:.5}), variance {variance:.4} vs {target:.4}"),
    );
}

#[test]
fn criterion_7_low_percentage_tracts_have_higher_error() {
    let started = Instant::now();
    let schema = parse_schema(
        r#"{
            "attributes": [{"name": "race", "labels": ["black", "white"]}],
            "geo_prefix_lengths": {"county": 1, "tract": 3, "block_group": 4, "block": 6}
        }"#,
    )
    .unwrap();
    // 20 tracts whose true target percentage ramps from 1% to 60%, four
    // 250-person blocks each.
    let mut csv = String::from("table,block,predicate,count\n");
    for tract in 0..20 {
        let pct = 1.0 + 59.0 * tract as f64 / 19.0;
        for block in 0..4 {
            let code = format!("1{tract:02}0{block:02}");
            let black = (pct * 2.5).round() as i64;
            csv.push_str(&format!("by_race,{code},race=black,{black}\n"));
            csv.push_str(&format!("by_race,{code},race=white,{}\n", 250 - black));
        }
    }
    let tables = synthpop::tables::load_tables(&csv, &schema).unwrap();
    let target = Predicate::parse("race=black", &schema).unwrap();
    let cfg = DpConfig {
        epsilon: 1.0,
        runs: 50,
        seed: 7,
        nonnegativity_fix: NonnegativityFix::Clamp,
    };
    let map = error_map(&tables, &target, &cfg, &schema).unwrap();
    assert_eq!(map.rows.len(), 20);
    let truth: Vec<f64> = map.rows.iter().map(|r| r.true_percentage).collect();
    let errors: Vec<f64> = map.rows.iter().map(|r| r.smape).collect();
    let rho = spearman_r(&truth, &errors).unwrap();
    let elapsed = started.elapsed();
    check(
        7,
        "true percentage anti-correlates with per-tract error",
        rho <= -0.5 && elapsed.as_secs_f64() < 10.0,
        &format!("spearman {rho:.3}, {:.3}s", elapsed.as_secs_f64()),
    );
}

/// Materialize a self-contained fixture directory for CLI runs.
fn write_cli_fixture(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(
        dir.join("schema.json"),
        r#"{
            "attributes": [
                {"name": "eth", "labels": ["h", "n"]},
                {"name": "race", "labels": ["black", "white"]}
            ],
            "geo_prefix_lengths": {"county": 1, "tract": 2, "block_group": 3, "block": 4}
        }"#,
    )
    .unwrap();
    let mut tables = String::from("table,block,predicate,count\n");
    let mut stream = Stream::new(88);
    let mut micro = String::from("weight,eth,race\n");
    for tract in 0..4 {
        for block in 0..3 {
            let code = format!("1{tract}{block}0");
            let mut cells = [0i64; 4];
            for cell in cells.iter_mut() {
                *cell = stream.next_below(20) as i64;
            }
            for (idx, (e, r)) in [("h", "black"), ("h", "white"), ("n", "black"), ("n", "white")]
                .iter()
                .enumerate()
            {
                tables.push_str(&format!(
                    "by_eth_race,{code},eth={e};race={r},{}\n",
                    cells[idx]
                ));
            }
            let m = stream.next_below(3) + 1;
            for _ in 0..m {
                let (e, r) = [("h", "black"), ("h", "white"), ("n", "black"), ("n", "white")]
                    [stream.next_below(4) as usize];
                micro.push_str(&format!("{},{e},{r}\n", 1 + stream.next_below(3)));
            }
        }
    }
    std::fs::write(dir.join("tables.csv"), tables).unwrap();
    std::fs::write(dir.join("microdata.csv"), micro).unwrap();
    std::fs::write(
        dir.join("config.json"),
        r#"{
            "schema_path": "schema.json",
            "tables_path": "tables.csv",
            "output_dir": "out",
            "solve": {"rng_seed": 5},
            "dp": {"epsilon": 1.0, "runs": 25, "seed": 11},
            "log_level": "quiet"
        }"#,
    )
    .unwrap();
}

fn run_pipeline(fixture: &Path, threads: Option<usize>) -> std::collections::BTreeMap<String, Vec<u8>> {
    let bin = env!("CARGO_BIN_EXE_synthpop");
    let config = fixture.join("config.json");
    let out_dir = fixture.join("out");
    if out_dir.exists() {
        std::fs::remove_dir_all(&out_dir).unwrap();
    }
    let thread_args: Vec<String> = match threads {
        Some(n) => vec!["--threads".into(), n.to_string()],
        None => vec![],
    };
    let run = |args: &[&str]| {
        let status = Command::new(bin)
            .args(args)
            .args(&thread_args)
            .status()
            .unwrap();
        assert!(status.success(), "command {args:?} failed: {status}");
    };
    let config_s = config.to_str().unwrap();
    let persons = out_dir.join("persons.csv");
    run(&["synth", "--config", config_s]);
    run(&[
        "validate",
        "--config",
        config_s,
        "--persons",
        persons.to_str().unwrap(),
        "--microdata",
        fixture.join("microdata.csv").to_str().unwrap(),
        "--scatter",
    ]);
    run(&["errmap", "--config", config_s, "--target", "race=black"]);

    let mut snapshot = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(&out_dir).unwrap() {
        let entry = entry.unwrap();
        snapshot.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    snapshot
}

#[test]
fn criterion_8_pipeline_is_byte_deterministic() {
    let fixture = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("determinism_fixture");
    write_cli_fixture(&fixture);
    let first = run_pipeline(&fixture, None);
    let second = run_pipeline(&fixture, Some(1));
    let third = run_pipeline(&fixture, Some(3));
    assert_eq!(
        first.keys().collect::<Vec<_>>(),
        vec![
            "errmap.csv",
            "errmap_flagged.csv",
            "errmap_manifest.json",
            "persons.csv",
            "solver_summary.csv",
            "synth_manifest.json",
            "validate_manifest.json",
            "validation_report.csv",
            "validation_scatter.csv",
        ]
    );
    let same_12 = first == second;
    let same_13 = first == third;
    check(
        8,
        "synth/validate/errmap outputs are byte-identical across runs and thread counts",
        same_12 && same_13,
        &format!("{} files compared", first.len()),
    );
}

#[test]
fn criterion_9_round_trips() {
    let schema = toy_schema();
    let space = build_predicate_space(&schema).unwrap();
    let bl = blocks(4);
    let defs: Vec<TableDefinition> = [vec!["a"], vec!["b", "c"], vec![]]
        .iter()
        .map(|attrs| TableDefinition::new(format!("t{}", attrs.len()), attrs, &schema).unwrap())
        .collect();
    let ws: Vec<_> = defs
        .iter()
        .map(|d| build_query_matrix(d, &space, &schema).unwrap())
        .collect();
    let mut stream = Stream::new(909);
    for fixture in 0..1000u32 {
        let mut values = Matrix::zeros(space.len(), bl.len());
        for j in 0..bl.len() {
            for k in 0..space.len() {
                *values.at_mut(k, j) = stream.next_below(4) as i64;
            }
        }
        let x = CountsMatrix::new(values, bl.clone()).unwrap();
        let people = expand(&x, &space, &schema);
        let back = counts_of(&people, &bl, &space).unwrap();
        assert_eq!(back, x, "fixture {fixture}: counts round trip broke");
        let direct = summarize(&people, &defs, &bl, &schema).unwrap();
        for (w, got) in ws.iter().zip(&direct) {
            let via_matrix = aggregate(w, x.values()).unwrap();
            assert_eq!(got, &via_matrix, "fixture {fixture}: summarize != aggregate");
        }
    }
    check(
        9,
        "expand/counts_of and summarize/aggregate round trips",
        true,
        "1000 random fixtures",
    );
}
