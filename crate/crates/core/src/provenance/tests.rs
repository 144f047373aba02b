use super::*;
use crate::programs::PrimitiveId;

const FIXTURE: &str = include_str!("../../tests/fixtures/defense_record.json");

fn fixture() -> ProvenanceRecord {
    ProvenanceRecord::from_json(FIXTURE).unwrap()
}

/// Registry whose bounds are all `[0, 1]`, so raw context values are the
/// stored feature vector.
fn unit_registry() -> FeatureRegistry {
    let features: Vec<_> = (0..FEATURE_DIM)
        .map(|i| serde_json::json!({ "name": format!("f{i}"), "min": 0.0, "max": 1.0 }))
        .collect();
    FeatureRegistry::from_json(&serde_json::json!({ "version": "t", "features": features }).to_string()).unwrap()
}

fn record_at(v: &[f64]) -> ProvenanceRecord {
    let mut r = fixture();
    for (i, x) in v.iter().enumerate() {
        r.environmental_context.insert(format!("f{i}"), serde_json::json!(x));
    }
    r
}

fn vec_with(head: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; FEATURE_DIM];
    v[..head.len()].copy_from_slice(head);
    v
}

#[test]
fn reference_defense_record_is_accepted() {
    let mut store = ProvenanceStore::in_memory(FeatureRegistry::builtin());
    assert_eq!(store.append(&fixture()).unwrap(), 0);
    assert_eq!(fixture().logical_primitive, "L3: Defense");
    assert_eq!(fixture().success_rate(), Some(95.0));
    assert!(store.features(0).is_none());
}

#[test]
fn missing_field_is_a_schema_error() {
    let mut v: Value = serde_json::from_str(FIXTURE).unwrap();
    v.as_object_mut().unwrap().remove("logical_primitive");
    let err = ProvenanceRecord::from_value(v).unwrap_err();
    assert_eq!(err.path, "logical_primitive");
}

#[test]
fn extra_and_mistyped_fields_are_rejected() {
    let mut v: Value = serde_json::from_str(FIXTURE).unwrap();
    v["outcome"]["note"] = Value::from("x");
    assert_eq!(ProvenanceRecord::from_value(v).unwrap_err().path, "outcome.note");

    let mut v: Value = serde_json::from_str(FIXTURE).unwrap();
    v["interpretable_rationale"]["rollback_available"] = Value::from("yes");
    assert_eq!(
        ProvenanceRecord::from_value(v).unwrap_err().path,
        "interpretable_rationale.rollback_available"
    );

    let mut v: Value = serde_json::from_str(FIXTURE).unwrap();
    v["environmental_context"]["bad"] = serde_json::json!({ "x": 1 });
    assert!(ProvenanceRecord::from_value(v).is_err());
}

#[test]
fn context_accepts_numeric_ranges() {
    let mut r = fixture();
    r.environmental_context
        .insert("delay_ms".into(), serde_json::json!([50.0, 600.0]));
    r.validate().unwrap();
    r.environmental_context
        .insert("delay_ms".into(), serde_json::json!([50.0]));
    assert!(r.validate().is_err());
}

#[test]
fn ids_are_line_indices() {
    let mut store = ProvenanceStore::in_memory(FeatureRegistry::builtin());
    assert_eq!(store.append(&fixture()).unwrap(), 0);
    assert_eq!(store.append(&fixture()).unwrap(), 1);
    assert_eq!(store.len(), 2);
}

#[test]
fn reopen_is_byte_equal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("provenance.jsonl");
    let mut store = ProvenanceStore::open(&path, FeatureRegistry::builtin()).unwrap();
    let mut second = fixture();
    second.outcome.status = "rejected".into();
    store.append(&fixture()).unwrap();
    store.append(&second).unwrap();
    let before = std::fs::read(&path).unwrap();

    let back = ProvenanceStore::open(&path, FeatureRegistry::builtin()).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back.get(1).unwrap(), &second);
    for id in 0..2 {
        assert_eq!(back.raw_line(id), store.raw_line(id));
        assert_eq!(back.get(id).unwrap().to_line(), store.raw_line(id).unwrap());
    }
    assert_eq!(std::fs::read(&path).unwrap(), before);
}

#[test]
fn corrupt_line_reports_its_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    std::fs::write(&path, format!("{}\n{{\"timestamp\": 1}}\n", fixture().to_line())).unwrap();
    match ProvenanceStore::open(&path, FeatureRegistry::builtin()) {
        Err(StoreError::Corrupt { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn retrieval_on_empty_store() {
    let store = ProvenanceStore::in_memory(&unit_registry());
    assert!(store.retrieve_similar(&vec_with(&[]), 3).is_empty());
}

#[test]
fn retrieval_on_single_record() {
    let mut store = ProvenanceStore::in_memory(&unit_registry());
    store.append(&record_at(&vec_with(&[0.3, 0.4]))).unwrap();
    let hits = store.retrieve_similar(&vec_with(&[]), 5);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].0, 0);
    assert!((hits[0].1 - 0.5).abs() < 1e-12);
}

#[test]
fn retrieval_over_hand_placed_vectors() {
    let points = [
        vec_with(&[0.9, 0.9]),
        vec_with(&[0.1, 0.0]),
        vec_with(&[0.5, 0.5]),
        vec_with(&[0.0, 0.1]),
        vec_with(&[0.2, 0.2]),
    ];
    let mut store = ProvenanceStore::in_memory(&unit_registry());
    for p in &points {
        store.append(&record_at(p)).unwrap();
    }
    let hits = store.retrieve_similar(&vec_with(&[]), 2);
    let ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
    // 1 and 3 are both at 0.1; the lower id comes first.
    assert_eq!(ids, vec![1, 3]);
    assert!((hits[0].1 - 0.1).abs() < 1e-12);
    assert_eq!(store.retrieve_similar(&vec_with(&[]), 9).len(), 5);
    assert!(store.retrieve_similar(&vec_with(&[]), 0).is_empty());
}

#[test]
fn features_are_clamped_into_unit_range() {
    let reg = FeatureRegistry::builtin();
    let raw = [150.0, -3.0, 500.0, 0.0, 0.5, 2.5, 0.0, 1.0, 0.0, 900.0];
    let f = reg.normalize(&raw);
    assert_eq!(f, vec![1.0, 0.0, 0.5, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn snippet_lookup() {
    let reg = SnippetRegistry::builtin();
    let hits = reg.snippets_for(PrimitiveId::Defend, &["outlier".to_string()]);
    let ids: Vec<&str> = hits.iter().map(|s| s.snippet_id.as_str()).collect();
    assert_eq!(ids, vec!["ek-l2-01-outlier"]);

    let all_l1 = reg.snippets_for(PrimitiveId::FormationControl, &[]);
    assert_eq!(all_l1.len(), 2);
    assert!(all_l1.windows(2).all(|w| w[0].snippet_id < w[1].snippet_id));

    assert!(reg.snippets_for_code("L3: Defense", &[]).is_empty());
    assert_eq!(reg.snippets_for_code("L2", &[]).len(), 2);
    assert_eq!(reg.read_count(), 3);
}

#[test]
fn untagged_snippet_is_rejected() {
    let doc = r#"{"version":"v","snippets":[{"snippet_id":"a","primitive":"L1","text":"t","tags":[]}]}"#;
    assert!(SnippetRegistry::from_json(doc).is_err());
}

#[test]
fn assignments_and_percentages() {
    assert_eq!(
        parse_assignments("blacklist_t=0.8").unwrap(),
        vec![("blacklist_t".to_string(), 0.8)]
    );
    assert!(parse_assignments("w_goal").is_err());
    let changes = fixture().parameter_changes().unwrap();
    assert_eq!(changes[0], ("P4.2".to_string(), vec![("blacklist_t".to_string(), 0.8)]));
    assert_eq!(parse_percent("+12.5%"), Some(12.5));
    assert_eq!(parse_percent("95"), None);
    assert_eq!(
        parse_percent(&format_percent(79.72711391296315)),
        Some(79.72711391296315)
    );
}
