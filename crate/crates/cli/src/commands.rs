//! The five subcommands. Each one loads what it needs, runs the core
//! pipeline, and writes reports that embed the resolved configuration and
//! seed. Build reads development data and writes a rule; evaluate reads a
//! rule and independent data and writes only a report, so no command ever
//! both sees the evaluation set and emits a rule.

use std::path::Path;

use itr_core::propensity::PropensityPair;
use itr_core::rule::{build_rule, TreatmentRule};
use itr_core::select::compare_on_validation;
use itr_core::simulate::{run_study, Method, StudyGrid};
use itr_core::splitting::{split, SplitSpec};
use itr_core::tabular::{load_csv, DataSchema, Dataset, RoleAssignment};
use serde::{Deserialize, Serialize};

use crate::config::{require_path, resolve_seed, RunConfig};
use crate::io::{sha256_hex, write_atomic, write_dataset_csv, write_json, Failure, Outcome};
use crate::{BuildArgs, CompareArgs, EvaluateArgs, Preset, SimulateArgs, SplitArgs};

/// Common envelope for every JSON report.
#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    payload: T,
}

fn report<T: Serialize>(
    command: &str,
    seed: u64,
    config: &RunConfig,
    payload: T,
    path: &Path,
) -> Outcome<()> {
    write_json(
        path,
        &Report {
            schema_version: itr_core::SCHEMA_VERSION,
            command,
            seed,
            config,
            payload,
        },
    )
}

fn load(path: &Path, schema: &DataSchema) -> Outcome<Dataset> {
    load_csv(path, schema).map_err(|e| {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", path.display(), f.message),
            code: f.code,
        }
    })
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

// ------------------------------------------------------------------ split

#[derive(Serialize)]
struct SplitPayload {
    input: String,
    n_rows: usize,
    fractions: Vec<f64>,
    stratify_by_treatment: bool,
    parts: Vec<PartRecord>,
}

#[derive(Serialize, Deserialize)]
struct PartRecord {
    name: String,
    path: String,
    n_rows: usize,
    sha256: String,
    indices: Vec<usize>,
}

fn part_names(k: usize) -> Vec<String> {
    match k {
        2 => vec!["development".into(), "evaluation".into()],
        3 => vec![
            "development".into(),
            "validation".into(),
            "evaluation".into(),
        ],
        _ => (1..=k).map(|i| format!("part{i}")).collect(),
    }
}

pub fn run_split(mut config: RunConfig, args: SplitArgs, seed_flag: Option<u64>) -> Outcome<()> {
    let input = require_path(args.data, &config.data.input, "input data")?;
    let seed = resolve_seed(seed_flag, config.split.seed)?;
    config.data.input = Some(input.clone());
    config.split.seed = Some(seed);

    let schema = config.schema()?.clone();
    let data = load(&input, &schema)?;
    let spec = SplitSpec {
        fractions: config.split.fractions.clone(),
        seed,
        stratify_by_treatment: config.split.stratify_by_treatment,
    };
    let parts = split(&data, &spec)?;

    let names = part_names(parts.len());
    let mut records = Vec::with_capacity(parts.len());
    for (name, part) in names.iter().zip(&parts) {
        let path = args.out_dir.join(format!("{name}.csv"));
        write_dataset_csv(&part.data, &path)?;
        records.push(PartRecord {
            name: name.clone(),
            path: path_string(&path),
            n_rows: part.data.n_rows(),
            sha256: sha256_hex(&path)?,
            indices: part.indices.clone(),
        });
    }
    let manifest = args.out_dir.join("split_manifest.json");
    report(
        "split",
        seed,
        &config,
        SplitPayload {
            input: path_string(&input),
            n_rows: data.n_rows(),
            fractions: spec.fractions.clone(),
            stratify_by_treatment: spec.stratify_by_treatment,
            parts: records,
        },
        &manifest,
    )?;
    println!(
        "split {} rows of {} into {} parts under {}",
        data.n_rows(),
        input.display(),
        parts.len(),
        args.out_dir.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ build

#[derive(Serialize)]
struct RuleFile {
    data: String,
    data_sha256: String,
    rule: TreatmentRule,
    propensity: Option<PropensityPair>,
}

/// The fields `evaluate` needs back from a rule file; anything else in the
/// JSON is ignored so hand-written rules are accepted.
#[derive(Deserialize)]
struct RuleFileIn {
    rule: TreatmentRule,
    #[serde(default)]
    data_sha256: Option<String>,
}

pub fn run_build(mut config: RunConfig, args: BuildArgs, seed_flag: Option<u64>) -> Outcome<()> {
    let input = require_path(args.data, &config.data.development, "development data")?;
    let seed = resolve_seed(seed_flag, config.cv.seed)?;
    config.data.development = Some(input.clone());
    config.cv.seed = Some(seed);

    let schema = config.schema()?.clone();
    let data = load(&input, &schema)?;
    let roles = RoleAssignment::from_schema(&schema, &data)?;
    let settings = config.build_settings(schema.outcome_kind, seed)?;
    let (rule, propensity) = build_rule(&data, &roles, &settings)?;

    for warning in &rule.diagnostics.warnings {
        eprintln!("warning: {warning}");
    }
    report(
        "build",
        seed,
        &config,
        RuleFile {
            data: path_string(&input),
            data_sha256: sha256_hex(&input)?,
            rule,
            propensity,
        },
        &args.out,
    )?;
    println!(
        "built rule from {} ({} rows) -> {}",
        input.display(),
        data.n_rows(),
        args.out.display()
    );
    Ok(())
}

// --------------------------------------------------------------- evaluate

#[derive(Serialize)]
struct EvaluatePayload {
    data: String,
    rule_path: String,
    report: itr_core::evaluate::EvaluationReport,
}

pub fn run_evaluate(
    mut config: RunConfig,
    args: EvaluateArgs,
    seed_flag: Option<u64>,
) -> Outcome<()> {
    let input = require_path(args.data, &config.data.evaluation, "evaluation data")?;
    let seed = resolve_seed(seed_flag, config.evaluation.bootstrap.seed)?;
    let cv_seed = resolve_seed(None, config.cv.seed)?;
    config.data.evaluation = Some(input.clone());
    config.evaluation.bootstrap.seed = Some(seed);
    config.cv.seed = Some(cv_seed);

    let text = std::fs::read_to_string(&args.rule)
        .map_err(|e| Failure::validation(format!("cannot read {}: {e}", args.rule.display())))?;
    let rule_file: RuleFileIn = serde_json::from_str(&text).map_err(|e| {
        Failure::validation(format!("invalid rule file {}: {e}", args.rule.display()))
    })?;

    if let Some(dev_digest) = &rule_file.data_sha256 {
        if sha256_hex(&input)? == *dev_digest {
            return Err(Failure::validation(format!(
                "{} is byte-identical to the development data the rule was built on; \
                 evaluation requires independent data",
                input.display()
            )));
        }
    }

    let schema = config.schema()?.clone();
    let data = load(&input, &schema)?;
    let roles = RoleAssignment::from_schema(&schema, &data)?;
    let settings = config.eval_settings(seed, cv_seed)?;
    let report_body = itr_core::evaluate::evaluate_rule(&rule_file.rule, &data, &roles, &settings)?;

    for warning in &report_body.warnings {
        eprintln!("warning: {warning}");
    }
    let abr = report_body.abr;
    report(
        "evaluate",
        seed,
        &config,
        EvaluatePayload {
            data: path_string(&input),
            rule_path: path_string(&args.rule),
            report: report_body,
        },
        &args.out,
    )?;
    match (abr.ci_lower, abr.ci_upper) {
        (Some(lo), Some(hi)) => println!(
            "ABR {:.4} (CI [{lo:.4}, {hi:.4}]) -> {}",
            abr.point,
            args.out.display()
        ),
        _ => println!("ABR {:.4} -> {}", abr.point, args.out.display()),
    }
    Ok(())
}

// ---------------------------------------------------------------- compare

#[derive(Serialize)]
struct ComparePayload {
    development: String,
    validation: String,
    report: itr_core::select::ValidationReport,
    rule_files: Vec<String>,
}

pub fn run_compare(
    mut config: RunConfig,
    args: CompareArgs,
    seed_flag: Option<u64>,
) -> Outcome<()> {
    let dev_path = require_path(args.dev, &config.data.development, "development data")?;
    let val_path = require_path(args.val, &config.data.validation, "validation data")?;
    let seed = resolve_seed(seed_flag, config.cv.seed)?;
    config.data.development = Some(dev_path.clone());
    config.data.validation = Some(val_path.clone());
    config.cv.seed = Some(seed);

    let schema = config.schema()?.clone();
    let dev = load(&dev_path, &schema)?;
    let val = load(&val_path, &schema)?;
    let roles = RoleAssignment::from_schema(&schema, &dev)?;
    let grid = config.candidate_grid(schema.outcome_kind)?;
    let settings = config.compare_settings(seed)?;
    let (validation_report, rules) = compare_on_validation(&dev, &val, &roles, &grid, &settings)?;

    let dev_digest = sha256_hex(&dev_path)?;
    let mut rule_files = Vec::with_capacity(rules.len());
    for (label, rule) in &rules {
        let path = args.rules_dir.join(format!("{label}.json"));
        report(
            "compare",
            seed,
            &config,
            RuleFile {
                data: path_string(&dev_path),
                data_sha256: dev_digest.clone(),
                rule: rule.clone(),
                propensity: None,
            },
            &path,
        )?;
        rule_files.push(path_string(&path));
    }
    let selected = validation_report.selected.clone();
    report(
        "compare",
        seed,
        &config,
        ComparePayload {
            development: path_string(&dev_path),
            validation: path_string(&val_path),
            report: validation_report,
            rule_files,
        },
        &args.out,
    )?;
    println!("selected '{selected}' -> {}", args.out.display());
    Ok(())
}

// --------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulatePayload {
    study: StudyGrid,
}

fn study_csv(grid: &StudyGrid) -> String {
    let mut out = String::from("rule_type");
    for n in &grid.sizes {
        out.push_str(&format!(",n_dev_{n}"));
    }
    out.push('\n');
    for method in &grid.methods {
        out.push_str(&format!("split_regression_{method}"));
        for n in &grid.sizes {
            let cell = grid
                .cells
                .iter()
                .find(|c| &c.method == method && c.n_dev == *n)
                .expect("complete grid");
            out.push_str(&format!(",{:.6}", cell.mean_outcome));
        }
        out.push('\n');
    }
    for (name, value) in [
        ("treat_none", grid.benchmarks.treat_none),
        ("treat_all", grid.benchmarks.treat_all),
        ("optimal", grid.benchmarks.optimal),
    ] {
        out.push_str(name);
        for _ in &grid.sizes {
            out.push_str(&format!(",{value:.6}"));
        }
        out.push('\n');
    }
    out
}

pub fn run_simulate(
    mut config: RunConfig,
    args: SimulateArgs,
    seed_flag: Option<u64>,
) -> Outcome<()> {
    if let Some(preset) = args.preset {
        let (replications, n_eval) = match preset {
            Preset::Desk => (200, 10_000),
            Preset::Full => (1000, 10_000),
        };
        config.simulate.replications = Some(replications);
        config.simulate.n_eval = Some(n_eval);
        config.simulate.sizes = Some(vec![50, 500, 1000]);
    }
    if let Some(r) = args.replications {
        config.simulate.replications = Some(r);
    }
    if let Some(n) = args.n_eval {
        config.simulate.n_eval = Some(n);
    }
    if let Some(b) = args.benchmark_rows {
        config.simulate.benchmark_rows = Some(b);
    }
    if let Some(sizes) = args.sizes {
        config.simulate.sizes = Some(sizes);
    }
    let seed = resolve_seed(seed_flag, config.simulate.base_seed)?;
    config.simulate.base_seed = Some(seed);

    let sim = config.simulate.to_core(seed);
    let sizes = config.simulate.sizes();
    let grid = run_study(&sim, &[Method::Weighted, Method::Naive], &sizes)?;

    write_atomic(&args.out_csv, study_csv(&grid).as_bytes())?;
    report(
        "simulate",
        seed,
        &config,
        SimulatePayload { study: grid },
        &args.out_json,
    )?;
    println!(
        "study of sizes {:?} ({} replications) -> {} and {}",
        sizes,
        sim.replications,
        args.out_csv.display(),
        args.out_json.display()
    );
    Ok(())
}
