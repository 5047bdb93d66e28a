use histpolicy_wasm::{compare_states_json, patient_trace_json, tree_complexity_json};
use serde_json::Value;

const SMALL: &str = r#"{"n_patients": 200, "n_actions": 3, "stages": 6, "seed": 4}"#;

#[test]
fn comparison_reports_every_state_with_charts() {
    let out: Value = serde_json::from_str(&compare_states_json(SMALL).unwrap()).unwrap();
    let states = out["states"].as_array().unwrap();
    assert_eq!(states.len(), 4);
    assert_eq!(states[0]["state"], "X_t");
    let oracle = out["oracle_auroc"].as_f64().unwrap();
    assert!(oracle > 0.5 && oracle <= 1.0);
    assert!(out["stage_svg"].as_str().unwrap().contains("<svg"));
    assert!(out["ope_svg"].as_str().unwrap().contains("<svg"));
    for s in states {
        assert!(s["ope_median_last"].as_f64().unwrap() >= 1.0);
    }
}

#[test]
fn sweep_respects_the_one_hot_leaf_bound() {
    let out: Value = serde_json::from_str(
        &tree_complexity_json(r#"{"n_patients": 200, "n_actions": 3, "stages": 6, "seed": 4, "n_models": 30}"#).unwrap(),
    )
    .unwrap();
    assert!(out["max_leaves"].as_u64().unwrap() <= 3);
    assert!(!out["points"].as_array().unwrap().is_empty());
}

#[test]
fn trace_products_grow_and_bad_inputs_are_rejected() {
    let out: Value = serde_json::from_str(
        &patient_trace_json(r#"{"n_patients": 200, "n_actions": 3, "stages": 6, "seed": 4, "patient": 2}"#).unwrap(),
    )
    .unwrap();
    let stages = out["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 6);
    let products: Vec<f64> = stages.iter().map(|s| s["history_product"].as_f64().unwrap()).collect();
    assert!(products.windows(2).all(|w| w[1] >= w[0]) && products[0] >= 1.0);

    assert!(patient_trace_json(r#"{"n_patients": 200, "patient": 100000}"#).is_err());
    assert!(tree_complexity_json(r#"{"state": "nope"}"#).is_err());
    assert!(compare_states_json(r#"{"n_patients": 999999}"#).is_err());
    assert!(compare_states_json("not json").is_err());
}
