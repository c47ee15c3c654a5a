//! The published scenario schema and the scenario loader agree: everything
//! the loader writes validates, and documented invalid inputs are rejected
//! by both.

use serde_json::{json, Value};
use shertwin::Scenario;
use std::path::Path;

fn root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn validator() -> jsonschema::Validator {
    let text = std::fs::read_to_string(root().join("schemas/scenario.schema.json")).unwrap();
    let schema: Value = serde_json::from_str(&text).unwrap();
    jsonschema::draft202012::new(&schema).expect("schema compiles")
}

fn schema_errors(v: &jsonschema::Validator, doc: &Value) -> Vec<String> {
    v.iter_errors(doc).map(|e| format!("{}: {e}", e.instance_path)).collect()
}

#[test]
fn materialized_default_validates() {
    let v = validator();
    let empty = json!({});
    assert!(schema_errors(&v, &empty).is_empty());
    let full = serde_json::to_value(Scenario::from_json("{}").unwrap()).unwrap();
    assert_eq!(schema_errors(&v, &full), Vec::<String>::new());
    // The materialized form loads back to the same scenario.
    let again = Scenario::from_json(&full.to_string()).unwrap();
    assert_eq!(again, Scenario::from_json("{}").unwrap());
}

#[test]
fn shipped_scenarios_validate() {
    let v = validator();
    let mut n = 0;
    for entry in std::fs::read_dir(root().join("data/scenarios")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let doc: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(schema_errors(&v, &doc), Vec::<String>::new(), "{}", path.display());
        let scenario = Scenario::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let full = serde_json::to_value(&scenario).unwrap();
        assert_eq!(schema_errors(&v, &full), Vec::<String>::new(), "{}", path.display());
        n += 1;
    }
    assert!(n >= 4);
}

#[test]
fn invalid_documents_are_rejected_by_schema_and_loader() {
    let v = validator();
    let cases = [
        json!({"mode": "SOLO"}),
        json!({"dt": 0}),
        json!({"dt": -0.001}),
        json!({"seed": -1}),
        json!({"seed": 1.5}),
        json!({"max_duration": 0}),
        json!({"extra": 1}),
        json!({"scene": {"radius": -1}}),
        json!({"scene": {"radiuz": 1}}),
        json!({"scene": {"rot_damping": 0}}),
        json!({"scene": {"sclera_stiffness": -5}}),
        json!({"scene": {"ports": [[0, 0, 1]]}}),
        json!({"robots": {"middle": {}}}),
        json!({"robots": {"right": {"master_map": [0, 0]}}}),
        json!({"robots": {"right": {"mount": {"port": 2, "aim": [0, 0, 0], "insertion_depth": 0.01, "shaft_length": 0.03}}}}),
        json!({"robots": {"left": {"mount": {"port": 0, "aim": [0, 0, 0], "insertion_depth": 0.01}}}}),
        json!({"robots": {"left": {"limits": {"vel_max": [1, 1, 1, 1, 0]}}}}),
        json!({"robots": {"right": {"axes": [{"kind": "helical", "v": [0, 0, 1]}]}}}),
    ];
    for doc in cases {
        assert!(!schema_errors(&v, &doc).is_empty(), "schema accepted {doc}");
        assert!(Scenario::from_json(&doc.to_string()).is_err(), "loader accepted {doc}");
    }
}
