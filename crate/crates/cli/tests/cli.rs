//! End-to-end tests of the `screening` binary: command outputs, exit codes,
//! determinism, and conformance of every JSON output to the schemas shipped
//! under `docs/schemas/`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_screening"))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn write_fixture(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

fn fig1_instance(dir: &tempfile::TempDir) -> PathBuf {
    write_fixture(
        dir,
        "fig1.json",
        r#"{"items":[{"name":"wide","lower":0.01,"upper":1.0},{"name":"narrow","lower":0.5,"upper":1.0}]}"#,
    )
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Minimal JSON-schema conformance check covering the subset the shipped
/// schemas use: type (possibly a list), required, properties, items, enum.
fn validate(value: &Value, schema: &Value, path: &str) {
    if let Some(allowed) = schema.get("enum") {
        let options = allowed.as_array().unwrap();
        assert!(options.contains(value), "{path}: {value} not in {options:?}");
        return;
    }
    if let Some(ty) = schema.get("type") {
        let names: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(list) => list.iter().map(|v| v.as_str().unwrap()).collect(),
            _ => panic!("bad schema type at {path}"),
        };
        let matches = names.iter().any(|name| match *name {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            "number" => value.is_number(),
            "integer" => {
                value.is_i64()
                    || value.is_u64()
                    || value.as_f64().is_some_and(|x| x.fract() == 0.0)
            }
            other => panic!("unsupported schema type {other} at {path}"),
        });
        assert!(matches, "{path}: {value} does not match type {names:?}");
    }
    if value.is_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for key in required {
                let key = key.as_str().unwrap();
                assert!(
                    value.get(key).is_some(),
                    "{path}: missing required field {key}"
                );
            }
        }
        if let Some(props) = schema.get("properties").and_then(Value::as_object) {
            for (key, sub) in props {
                if let Some(field) = value.get(key) {
                    validate(field, sub, &format!("{path}.{key}"));
                }
            }
        }
    }
    if let (Some(items), Some(elems)) = (schema.get("items"), value.as_array()) {
        for (i, elem) in elems.iter().enumerate() {
            validate(elem, items, &format!("{path}[{i}]"));
        }
    }
}

fn assert_schema(value: &Value, schema_file: &str) {
    let path = workspace_root().join("docs/schemas").join(schema_file);
    let schema: Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).expect("schema parses");
    validate(value, &schema, "$");
}

#[test]
fn solve_reports_gamma_star_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let out = run(&["solve", "--input", input.to_str().unwrap()]);
    let json = stdout_json(&out);
    assert_schema(&json, "solve.schema.json");
    let gamma = json["gamma_star"].as_f64().unwrap();
    assert!((gamma - 0.50720).abs() < 5e-5, "gamma_star {gamma}");
    assert_eq!(json["active_set"], serde_json::json!([0]));
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let args = ["adversary", "--input", input.to_str().unwrap(), "--format", "csv", "--samples", "500", "--seed", "9"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn price_law_and_compare_validate() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let law = stdout_json(&run(&["price-law", "--input", input.to_str().unwrap()]));
    assert_schema(&law, "price-law.schema.json");
    assert!(law["items"][0]["atom"].is_null());
    let atom_mass = law["items"][1]["atom"]["mass"].as_f64().unwrap();
    assert!((atom_mass - 0.6484).abs() < 1e-3);

    let zero_lower = write_fixture(
        &dir,
        "zero.json",
        r#"{"items":[{"name":"a","lower":0.0,"upper":1.0},{"name":"b","lower":0.5,"upper":1.0}]}"#,
    );
    let cmp = stdout_json(&run(&["compare", "--input", zero_lower.to_str().unwrap()]));
    assert_schema(&cmp, "compare.schema.json");
    let gap = cmp["zero_lower_gap"]["gap"].as_f64().unwrap();
    assert!((gap - 0.38816).abs() < 1e-4);

    // gap section absent when every lower bound is positive
    let cmp = stdout_json(&run(&["compare", "--input", input.to_str().unwrap()]));
    assert!(cmp["zero_lower_gap"].is_null());
}

#[test]
fn adversary_summary_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let summary = stdout_json(&run(&["adversary", "--input", input.to_str().unwrap()]));
    assert_schema(&summary, "adversary-summary.schema.json");
    let eta = summary["eta"].as_f64().unwrap();
    let brv = summary["best_response_value"].as_f64().unwrap();
    assert!((eta - brv).abs() < 1e-8);

    let out = run(&[
        "adversary",
        "--input",
        input.to_str().unwrap(),
        "--format",
        "csv",
        "--samples",
        "100",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "xi,v_1,v_2");
    assert_eq!(lines.len(), 101);
    for line in &lines[1..] {
        let fields: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(fields.len(), 3);
        assert!(fields[0] >= 1.0);
    }
}

#[test]
fn verify_exit_codes_and_schema() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let out = run(&["verify", "--input", input.to_str().unwrap(), "--grid", "100"]);
    let json = stdout_json(&out);
    assert_schema(&json, "verify.schema.json");
    assert_eq!(json["verdict"], "pass");
    assert_eq!(out.status.code(), Some(0));

    // unreadable input: exit 1
    let out = run(&["verify", "--input", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    // invalid instance: exit 1
    let bad = write_fixture(&dir, "bad.json", r#"{"items":[{"name":"a","lower":5.0,"upper":3.0}]}"#);
    let out = run(&["solve", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn bundle_solve_partition_and_collection() {
    let dir = tempfile::tempdir().unwrap();
    let partition = write_fixture(
        &dir,
        "partition.json",
        r#"{"bundles":[{"members":[0,1],"lower":2.0,"upper":4.0},{"members":[2],"lower":1.0,"upper":2.0}]}"#,
    );
    let json = stdout_json(&run(&["bundle-solve", "--input", partition.to_str().unwrap()]));
    assert_schema(&json, "bundle-solve.schema.json");
    assert_eq!(json["best"]["gamma_semantics"], "optimal");
    let gamma = json["best"]["gamma"].as_f64().unwrap();
    assert!((gamma - 0.59061610914964125).abs() < 1e-9);

    let collection = write_fixture(
        &dir,
        "collection.json",
        r#"{"subsets":[
            {"members":[0],"lower":0.5,"upper":1.0},
            {"members":[1],"lower":0.5,"upper":1.0},
            {"members":[2],"lower":0.5,"upper":1.0},
            {"members":[0,1],"lower":1.0,"upper":2.0},
            {"members":[1,2],"lower":1.0,"upper":2.0},
            {"members":[0,1,2],"lower":1.5,"upper":3.0}]}"#,
    );
    let json = stdout_json(&run(&["bundle-solve", "--input", collection.to_str().unwrap()]));
    assert_schema(&json, "bundle-solve.schema.json");
    assert_eq!(json["best"]["gamma_semantics"], "guarantee");
    assert_eq!(json["candidates"].as_array().unwrap().len(), 4);
    assert_eq!(
        json["candidates"][0]["partition"],
        serde_json::json!([[0], [1], [2]])
    );
    assert_eq!(json["candidates"][1]["partition"], serde_json::json!([[0, 1], [2]]));
}

#[test]
fn sweep_csv_columns_follow_fig1d() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let out_path = dir.path().join("sweep.csv");
    let out = run(&[
        "sweep",
        "--input",
        input.to_str().unwrap(),
        "--item",
        "0",
        "--bound",
        "lower",
        "--from",
        "1e-4",
        "--to",
        "0.5",
        "--grid",
        "60",
        "--format",
        "csv",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,separable_ratio,semi_separable_ratio");
    assert_eq!(lines.len(), 61);
    let rows: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect();
    // both columns rise with the lower bound; the semi-separable one
    // dominates everywhere and stays flat while the separable one collapses
    for w in rows.windows(2) {
        assert!(w[0][1] <= w[1][1] + 1e-12);
        assert!(w[0][2] <= w[1][2] + 1e-12);
    }
    for row in &rows {
        assert!(row[2] >= row[1] - 1e-9);
    }
    assert!(rows[0][1] < 0.27);
    assert!(rows[0][2] > 0.5);

    // JSON form validates against the sweep schema
    let json = stdout_json(&run(&[
        "sweep",
        "--input",
        input.to_str().unwrap(),
        "--from",
        "1e-4",
        "--to",
        "0.5",
        "--grid",
        "20",
    ]));
    assert_schema(&json, "sweep.schema.json");
}

#[test]
fn csv_numbers_use_plain_decimal_format() {
    let dir = tempfile::tempdir().unwrap();
    let input = fig1_instance(&dir);
    let out = run(&["solve", "--input", input.to_str().unwrap(), "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let gamma_line = text.lines().find(|l| l.starts_with("gamma_star,")).unwrap();
    let value = gamma_line.split(',').nth(1).unwrap();
    // root at the default 1e-10 tolerance, printed to 12 significant digits
    assert!(value.starts_with("0.507199256"), "formatted as {value}");
    assert_eq!(value.len(), "0.".len() + 12, "12 significant digits: {value}");
    assert!(!value.contains(' ') && !value.contains('_') && !value.contains('e'));
}
