use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use super::*;
use crate::programs::{Mapping, ProgramSpec, Template};
use crate::provenance::{FeatureRegistry, SnippetRegistry, FEATURE_DIM};

const RESPONSE: &str = include_str!("../../../../docs/moderator/response.example.json");
const FIXTURE: &str = include_str!("../../tests/fixtures/defense_record.json");

fn request(primitive: PrimitiveId, budget: usize) -> ModeratorRequest {
    let mapping = Mapping::initial(Registry::builtin());
    let mut telemetry = Map::new();
    telemetry.insert("frame".into(), Value::from(150));
    telemetry.insert("n_aircraft".into(), Value::from(10));
    telemetry.insert("most_inconsistent_reporter".into(), Value::from(0));
    ModeratorRequest {
        schema_version: SCHEMA_VERSION.to_string(),
        primitive,
        context: RequestContext {
            features: vec![0.5; FEATURE_DIM],
            telemetry,
        },
        current_pipeline: mapping.pipeline(primitive).serialize(),
        retrieved_cases: Vec::new(),
        expert_snippets: SnippetRegistry::builtin().snippets_for(primitive, &[]),
        budget,
    }
}

/// A formation-control case that raised the goal weight.
fn goal_case(w_goal: f64, rate: &str) -> ProvenanceRecord {
    let mut r = ProvenanceRecord::from_json(FIXTURE).unwrap();
    r.logical_primitive = "L1: Formation Control".into();
    let mut changes = Map::new();
    changes.insert("P1.1".into(), Value::from(format!("w_goal={w_goal}")));
    r.program_adaptation.adaptation_details.parameter_changes = changes;
    r.program_adaptation.selected_program.programs = vec!["P1.1".into(), "P1.2".into()];
    r.validation_results.success_rate = rate.into();
    r
}

fn case(id: usize, record: ProvenanceRecord) -> RetrievedCase {
    RetrievedCase {
        record_id: id,
        distance: 0.1 * id as f64,
        record,
    }
}

#[test]
fn retrieved_case_is_replayed_first() {
    let mut req = request(PrimitiveId::FormationControl, 6);
    req.retrieved_cases = vec![case(0, goal_case(4.0, "80%"))];
    let resp = scripted_synthesize(&req, AblationFlags::default(), 1).unwrap();
    let first = &resp.candidates[0];
    assert_eq!(first.origin, CandidateOrigin::RetrievedCase);
    let expected = vec![Edit::Mod {
        program_id: "P1.1".into(),
        patch: BTreeMap::from([("w_goal".to_string(), 4.0)]),
    }];
    assert_eq!(first.edits, expected);
    assert!((first.confidence - 0.8).abs() < 1e-12);
}

#[test]
fn cases_are_ignored_without_pc() {
    let mut req = request(PrimitiveId::FormationControl, 6);
    req.retrieved_cases = vec![case(0, goal_case(4.0, "80%"))];
    let flags = AblationFlags {
        use_ek: true,
        use_pc: false,
    };
    let resp = scripted_synthesize(&req, flags, 1).unwrap();
    assert!(resp.candidates.iter().all(|c| c.origin == CandidateOrigin::ExpertGrid));
}

#[test]
fn expert_only_defend_budget_three_gives_the_outlier_grid() {
    let req = request(PrimitiveId::Defend, 3);
    let flags = AblationFlags {
        use_ek: true,
        use_pc: false,
    };
    let resp = scripted_synthesize(&req, flags, 9).unwrap();
    let zs: Vec<f64> = resp
        .candidates
        .iter()
        .map(|c| match &c.edits[..] {
            [Edit::Add(spec)] => {
                assert_eq!(spec.program_id, "P2.1");
                spec.params["z"]
            }
            other => panic!("unexpected edits {other:?}"),
        })
        .collect();
    assert_eq!(zs, vec![2.0, 3.0, 4.0]);
}

#[test]
fn expert_formation_grid_enumerates_scale_factors() {
    let mut req = request(PrimitiveId::FormationControl, 20);
    req.expert_snippets.retain(|s| s.snippet_id == "ek-l1-02-spacing");
    let flags = AblationFlags {
        use_ek: true,
        use_pc: false,
    };
    let resp = scripted_synthesize(&req, flags, 0).unwrap();
    let mut got: Vec<(String, f64)> = resp
        .candidates
        .iter()
        .map(|c| match &c.edits[..] {
            [Edit::Mod { patch, .. }] => {
                let (k, v) = patch.iter().next().unwrap();
                (k.clone(), *v)
            }
            other => panic!("unexpected edits {other:?}"),
        })
        .collect();
    got.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    // r_coh = 525 would exceed r_comm = 350, so that grid point is dropped.
    assert_eq!(
        got,
        vec![
            ("r_coh".to_string(), 175.0),
            ("w_coh".to_string(), 0.5),
            ("w_coh".to_string(), 1.5),
            ("w_sep".to_string(), 0.5),
            ("w_sep".to_string(), 1.5),
        ]
    );
}

#[test]
fn random_path_is_deterministic_and_seed_dependent() {
    let req = request(PrimitiveId::FormationControl, 6);
    let flags = AblationFlags {
        use_ek: false,
        use_pc: false,
    };
    let a = scripted_synthesize(&req, flags, 5).unwrap();
    let b = scripted_synthesize(&req, flags, 5).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.candidates.len(), 6);
    assert!(a.candidates.iter().all(|c| c.origin == CandidateOrigin::ModeratorNovel));
    let c = scripted_synthesize(&req, flags, 6).unwrap();
    assert_ne!(a, c);
}

#[test]
fn momentum_follows_the_best_case() {
    let mut req = request(PrimitiveId::FormationControl, 6);
    req.retrieved_cases = vec![case(0, goal_case(2.0, "40%")), case(1, goal_case(3.0, "60%"))];
    let flags = AblationFlags {
        use_ek: false,
        use_pc: true,
    };
    let resp = scripted_synthesize(&req, flags, 3).unwrap();
    assert_eq!(resp.candidates.len(), 6);
    let goals: Vec<f64> = resp.candidates[2..]
        .iter()
        .filter_map(|c| {
            c.edits.iter().rev().find_map(|e| match e {
                Edit::Mod { patch, .. } => patch.get("w_goal").copied(),
                _ => None,
            })
        })
        .collect();
    assert!(goals.iter().any(|&g| g > 3.0 && g <= 10.0), "{goals:?}");
}

#[test]
fn budget_is_respected() {
    for budget in 1..8 {
        for primitive in PrimitiveId::ALL {
            for flags in [
                AblationFlags::default(),
                AblationFlags {
                    use_ek: false,
                    use_pc: false,
                },
            ] {
                let resp = scripted_synthesize(&request(primitive, budget), flags, 0).unwrap();
                assert!(!resp.candidates.is_empty() && resp.candidates.len() <= budget);
            }
        }
    }
}

#[test]
fn unknown_programs_are_dropped_by_validation() {
    let req = request(PrimitiveId::FormationControl, 6);
    let mut resp: ModeratorResponse = serde_json::from_str(RESPONSE).unwrap();
    resp.candidates.push(CandidateProposal {
        edits: vec![Edit::Mod {
            program_id: "P9.9".into(),
            patch: BTreeMap::from([("w_goal".to_string(), 2.0)]),
        }],
        rationale: "bogus".into(),
        confidence: 0.5,
        origin: CandidateOrigin::ModeratorNovel,
    });
    let ok = validate_response(resp, &req, Registry::builtin()).unwrap();
    assert_eq!(ok.candidates.len(), 2);

    let only_bad = ModeratorResponse {
        schema_version: SCHEMA_VERSION.into(),
        candidates: vec![CandidateProposal {
            edits: vec![Edit::Add(ProgramSpec::new(
                "P2.1",
                Template::OutlierFilter,
                &[("z", 3.0)],
            ))],
            rationale: "wrong primitive".into(),
            confidence: 0.5,
            origin: CandidateOrigin::ModeratorNovel,
        }],
    };
    assert!(matches!(
        validate_response(only_bad, &req, Registry::builtin()),
        Err(ModeratorError::Protocol(_))
    ));
}

#[test]
fn request_validation() {
    let mut req = request(PrimitiveId::Defend, 0);
    assert!(req.validate(DEFAULT_REQUEST_CAP).is_err());
    req.budget = 2;
    assert!(req.validate(DEFAULT_REQUEST_CAP).is_ok());
    assert!(req.validate(16).is_err());
}

/// Serves `body` with `status` to one connection; returns the base URL and
/// a handle yielding the received request body.
fn stub_server(status: u16, body: String) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut len = 0usize;
        let mut path = String::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if path.is_empty() {
                path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            }
            let lower = line.to_ascii_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            if line == "\r\n" || line.is_empty() {
                break;
            }
        }
        let mut buf = vec![0u8; len];
        reader.read_exact(&mut buf).unwrap();
        let mut out = stream;
        write!(
            out,
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        out.flush().unwrap();
        assert_eq!(path, "/synthesize");
        String::from_utf8(buf).unwrap()
    });
    (url, handle)
}

#[test]
fn external_fixture_round_trip() {
    let (url, handle) = stub_server(200, RESPONSE.to_string());
    let req = request(PrimitiveId::FormationControl, 6);
    let m = ExternalModerator::new(ExternalConfig::new(&url));
    let resp = m.synthesize(&req).unwrap();
    let fixture: ModeratorResponse = serde_json::from_str(RESPONSE).unwrap();
    assert_eq!(resp, fixture);
    let sent: ModeratorRequest = serde_json::from_str(&handle.join().unwrap()).unwrap();
    assert_eq!(sent, req);
}

#[test]
fn external_drops_unknown_program_and_keeps_the_rest() {
    let mut v: Value = serde_json::from_str(RESPONSE).unwrap();
    v["candidates"][0]["edits"][0]["arg"]["program_id"] = Value::from("P7.3");
    let (url, handle) = stub_server(200, v.to_string());
    let resp = ExternalModerator::new(ExternalConfig::new(&url))
        .synthesize(&request(PrimitiveId::FormationControl, 6))
        .unwrap();
    handle.join().unwrap();
    assert_eq!(resp.candidates.len(), 1);
    assert_eq!(resp.candidates[0].rationale, "tighter cohesion");
}

#[test]
fn external_error_status_is_a_protocol_error() {
    let (url, handle) = stub_server(500, "{}".into());
    let err = ExternalModerator::new(ExternalConfig::new(&url))
        .synthesize(&request(PrimitiveId::FormationControl, 6))
        .unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, ModeratorError::Protocol(_)));
}

#[test]
fn external_malformed_body_is_a_protocol_error() {
    let (url, handle) = stub_server(200, "not json".into());
    let err = ExternalModerator::new(ExternalConfig::new(&url))
        .synthesize(&request(PrimitiveId::FormationControl, 6))
        .unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, ModeratorError::Protocol(_)));
}

#[test]
fn unreachable_endpoint_fails_fast_and_falls_back() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut cfg = ExternalConfig::new(&format!("http://127.0.0.1:{port}"));
    cfg.timeout_s = 2.0;
    let external = ExternalModerator::new(cfg);
    let req = request(PrimitiveId::FormationControl, 6);
    let start = std::time::Instant::now();
    assert!(matches!(external.synthesize(&req), Err(ModeratorError::Protocol(_))));
    assert!(start.elapsed().as_secs_f64() < 2.5);

    let scripted = ScriptedModerator {
        flags: AblationFlags::default(),
        seed: 0,
    };
    let chain: [&dyn Moderator; 2] = [&external, &scripted];
    let (resp, name) = synthesize_with_fallback(&chain, &req, Registry::builtin()).unwrap();
    assert_eq!(name, "scripted");
    assert!(!resp.candidates.is_empty());
}

#[test]
fn feature_registry_matches_request_width() {
    assert_eq!(FeatureRegistry::builtin().features.len(), FEATURE_DIM);
}

#[test]
fn documented_request_example_parses() {
    let text = include_str!("../../../../docs/moderator/request.example.json");
    let req: ModeratorRequest = serde_json::from_str(text).unwrap();
    req.validate(DEFAULT_REQUEST_CAP).unwrap();
    assert!(Pipeline::parse(&req.current_pipeline, Registry::builtin()).is_ok());
}
