use super::*;
use proptest::prelude::*;

fn reg() -> &'static Registry {
    Registry::builtin()
}

fn obs() -> MetaObservation {
    MetaObservation::default()
}

fn l1(stages: Vec<ProgramSpec>) -> Pipeline {
    Pipeline {
        primitive: PrimitiveId::FormationControl,
        stages,
    }
}

fn l2(stages: Vec<ProgramSpec>) -> Pipeline {
    Pipeline {
        primitive: PrimitiveId::Defend,
        stages,
    }
}

#[test]
fn empty_formation_pipeline_returns_base() {
    let base = ControlParams::default();
    let c = l1(vec![]).interpret_control(&base, &obs()).unwrap();
    assert_eq!(c, base);
}

#[test]
fn later_stage_wins() {
    let p = l1(vec![
        ProgramSpec::new("a", Template::WeightSet, &[("w_coh", 2.0)]),
        ProgramSpec::new("b", Template::WeightSet, &[("w_coh", 1.0)]),
    ]);
    let c = p.interpret_control(&ControlParams::default(), &obs()).unwrap();
    assert_eq!(c.w_coh, 1.0);
    assert_eq!(c.w_sep, ControlParams::default().w_sep);
}

#[test]
fn outlier_filter_and_quarantine_fold() {
    let p = l2(vec![
        ProgramSpec::new("f", Template::OutlierFilter, &[("z", 3.0)]),
        ProgramSpec::new("q", Template::Quarantine, &[("aircraft", 4.0), ("ttl", 200.0)]),
    ]);
    let d = p.interpret_defend(&obs()).unwrap();
    assert_eq!(d.outlier_z, Some(3.0));
    assert_eq!(d.quarantine.keys().copied().collect::<Vec<_>>(), vec![4]);
    assert_eq!(d.quarantine[&4], 200);
    assert_eq!(d.trust_decay, None);
}

#[test]
fn quarantine_entries_union() {
    let p = l2(vec![
        ProgramSpec::new("q1", Template::Quarantine, &[("aircraft", 4.0), ("ttl", 50.0)]),
        ProgramSpec::new(
            "q2",
            Template::Quarantine,
            &[("aircraft", 2.0), ("ttl", 10.0), ("start_frame", 100.0)],
        ),
        ProgramSpec::new("q3", Template::Quarantine, &[("aircraft", 4.0), ("ttl", 20.0)]),
    ]);
    let d = p.interpret_defend(&obs()).unwrap();
    assert_eq!(d.quarantine.len(), 2);
    assert_eq!(d.quarantine[&4], 50);
    assert_eq!(d.quarantine[&2], 110);
}

#[test]
fn and_appends_pool_program() {
    let p = l1(vec![reg().pool_get("P1.1").unwrap().clone()]);
    let q = p
        .compose(&Edit::And(reg().pool_get("P1.3").unwrap().clone()), reg())
        .unwrap();
    assert_eq!(q.program_ids(), vec!["P1.1", "P1.3"]);
    assert_eq!(p.program_ids(), vec!["P1.1"]);
}

#[test]
fn mod_patches_in_place() {
    let p = l2(vec![reg().pool_get("P2.1").unwrap().clone()]);
    let mut patch = BTreeMap::new();
    patch.insert("z".to_string(), 0.8);
    let q = p
        .compose(
            &Edit::Mod {
                program_id: "P2.1".into(),
                patch,
            },
            reg(),
        )
        .unwrap();
    assert_eq!(q.stages[0].params["z"], 0.8);
    assert_eq!(p.stages[0].params["z"], 3.0);
}

#[test]
fn add_then_del_is_identity() {
    let p = Mapping::initial(reg()).formation;
    let add = Edit::Add(reg().pool_get("P1.4").unwrap().clone());
    let q = p.compose(&add, reg()).unwrap();
    let r = q
        .compose(
            &Edit::Del {
                program_id: "P1.4".into(),
            },
            reg(),
        )
        .unwrap();
    assert_eq!(r, p);
}

#[test]
fn edit_errors() {
    let p = Mapping::initial(reg()).formation;
    assert!(matches!(
        p.compose(
            &Edit::Del {
                program_id: "P9".into()
            },
            reg()
        ),
        Err(ProgramError::UnknownProgram(_))
    ));
    assert!(matches!(
        p.compose(
            &Edit::Mod {
                program_id: "P9".into(),
                patch: BTreeMap::new()
            },
            reg()
        ),
        Err(ProgramError::UnknownProgram(_))
    ));
    let defend = reg().pool_get("P2.1").unwrap().clone();
    assert!(matches!(
        p.compose(&Edit::And(defend), reg()),
        Err(ProgramError::PrimitiveMismatch { .. })
    ));
    let dup = reg().pool_get("P1.1").unwrap().clone();
    assert!(matches!(
        p.compose(&Edit::And(dup), reg()),
        Err(ProgramError::DuplicateProgram(_))
    ));
    let foreign = ProgramSpec::new("X1", Template::SpeedCap, &[("v_max", 4.0)]);
    assert!(matches!(
        p.compose(&Edit::Add(foreign.clone()), reg()),
        Err(ProgramError::NotInPool(_))
    ));
    assert!(matches!(
        p.compose(&Edit::Or(foreign), reg()),
        Err(ProgramError::MissingGuard(_))
    ));
}

#[test]
fn out_of_range_is_rejected_not_clamped() {
    let p = l1(vec![]);
    let bad = ProgramSpec::new("X", Template::WeightSet, &[("w_goal", 11.0)]);
    assert!(matches!(
        p.compose(&Edit::And(bad.clone()), reg()),
        Err(ProgramError::OutOfRange { .. })
    ));
    let forced = l1(vec![bad]);
    assert!(forced.interpret_control(&ControlParams::default(), &obs()).is_err());

    let unknown = ProgramSpec::new("Y", Template::WeightSet, &[("w_foo", 1.0)]);
    assert!(matches!(
        p.compose(&Edit::And(unknown), reg()),
        Err(ProgramError::UnknownParam { .. })
    ));
    let missing = ProgramSpec::new("Z", Template::OutlierFilter, &[]);
    assert!(matches!(
        l2(vec![]).compose(&Edit::And(missing), reg()),
        Err(ProgramError::MissingParam { .. })
    ));
}

#[test]
fn template_must_match_primitive() {
    let mut s = ProgramSpec::new("W", Template::WeightSet, &[("w_goal", 2.0)]);
    s.primitive = PrimitiveId::Defend;
    assert!(matches!(
        l2(vec![]).compose(&Edit::And(s), reg()),
        Err(ProgramError::TemplateMismatch { .. })
    ));
}

#[test]
fn radii_order_violation_is_invalid_control() {
    let p = l1(vec![ProgramSpec::new("d", Template::DistanceSet, &[("r_sep", 500.0)])]);
    assert!(matches!(
        p.interpret_control(&ControlParams::default(), &obs()),
        Err(ProgramError::InvalidControl(_))
    ));
}

#[test]
fn or_stage_applies_only_when_guard_holds() {
    let guard = Predicate::cmp(Metric::SOverall, CmpOp::Lt, 50.0);
    let spec = ProgramSpec::new("g", Template::WeightSet, &[("w_goal", 3.0)]).with_guard(guard);
    let p = l1(vec![]).compose(&Edit::Or(spec), reg()).unwrap();
    let base = ControlParams::default();
    let calm = MetaObservation {
        s_overall: 90.0,
        ..obs()
    };
    let bad = MetaObservation {
        s_overall: 20.0,
        ..obs()
    };
    assert_eq!(p.interpret_control(&base, &calm).unwrap().w_goal, base.w_goal);
    assert_eq!(p.interpret_control(&base, &bad).unwrap().w_goal, 3.0);
}

#[test]
fn and_strips_guard() {
    let spec = ProgramSpec::new("g", Template::WeightSet, &[("w_goal", 3.0)]).with_guard(Predicate::Const(false));
    let p = l1(vec![]).compose(&Edit::And(spec), reg()).unwrap();
    assert!(p.stages[0].guard.is_none());
}

#[test]
fn empty_pipeline_roundtrips() {
    let p = l2(vec![]);
    assert_eq!(Pipeline::parse(&p.serialize(), reg()).unwrap(), p);
}

#[test]
fn truncated_document_is_parse_error() {
    let text = Mapping::initial(reg()).formation.serialize();
    let cut = &text[..text.len() / 2];
    match Pipeline::parse(cut, reg()) {
        Err(ProgramError::Parse { line, column, .. }) => {
            assert_eq!(line, 1);
            assert!(column > 0);
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn parse_validates_against_registry() {
    let text = r#"{"primitive":"L1","stages":[{"program_id":"x","primitive":"L1","template":"SpeedCap","params":{"v_max":99.0}}]}"#;
    assert!(matches!(
        Pipeline::parse(text, reg()),
        Err(ProgramError::OutOfRange { .. })
    ));
}

#[test]
fn edit_script_json_shape() {
    let edits = vec![
        Edit::Del {
            program_id: "P1.2".into(),
        },
        Edit::Mod {
            program_id: "P1.1".into(),
            patch: [("w_goal".to_string(), 2.0)].into_iter().collect(),
        },
    ];
    let text = serde_json::to_string(&edits).unwrap();
    assert_eq!(
        text,
        r#"[{"op":"DEL","arg":{"program_id":"P1.2"}},{"op":"MOD","arg":{"program_id":"P1.1","patch":{"w_goal":2.0}}}]"#
    );
    let back: Vec<Edit> = serde_json::from_str(&text).unwrap();
    assert_eq!(back, edits);
}

#[test]
fn initial_mapping_reproduces_default_control() {
    let m = Mapping::initial(reg());
    let (c, d) = m.effects(&ControlParams::default(), &obs()).unwrap();
    assert_eq!(c, ControlParams::default());
    assert_eq!(d, DefendEffects::default());
    assert_eq!(m.version, 0);
}

#[test]
fn every_pool_program_is_valid() {
    for spec in &reg().pool {
        reg().validate_spec(spec).unwrap();
        assert_eq!(spec.primitive, spec.template.primitive());
    }
}

// Generators

fn value_in(range: &ParamRange) -> BoxedStrategy<f64> {
    let (lo, hi) = (range.min, range.max);
    if range.integer {
        (lo as i64..=hi.min(1000.0) as i64).prop_map(|v| v as f64).boxed()
    } else {
        (lo..=hi).boxed()
    }
}

fn spec_for(template: Template, id: String) -> BoxedStrategy<ProgramSpec> {
    let ts = reg().template(template).clone();
    let names: Vec<String> = ts.params.keys().cloned().collect();
    let strategies: Vec<_> = names
        .iter()
        .map(|n| {
            let required = ts.required.contains(n);
            let v = value_in(&ts.params[n]);
            if required {
                v.prop_map(Some).boxed()
            } else {
                proptest::option::of(v).boxed()
            }
        })
        .collect();
    strategies
        .prop_map(move |vals| {
            let mut s = ProgramSpec::new(&id, template, &[]);
            for (n, v) in names.iter().zip(vals) {
                if let Some(v) = v {
                    s.params.insert(n.clone(), v);
                }
            }
            if s.params.is_empty() {
                let first = &names[0];
                s.params.insert(first.clone(), ts.params[first].min);
            }
            s
        })
        .boxed()
}

fn templates_of(p: PrimitiveId) -> Vec<Template> {
    Template::ALL.iter().copied().filter(|t| t.primitive() == p).collect()
}

fn arb_spec(p: PrimitiveId, id: String) -> BoxedStrategy<ProgramSpec> {
    let ts = templates_of(p);
    (0..ts.len())
        .prop_flat_map(move |k| spec_for(ts[k], id.clone()))
        .boxed()
}

fn arb_guard() -> BoxedStrategy<Predicate> {
    let metric = prop_oneof![
        Just(Metric::SOverall),
        Just(Metric::ERadius),
        Just(Metric::SigmaHeight),
        Just(Metric::InfectedReportRate),
    ];
    let op = prop_oneof![Just(CmpOp::Lt), Just(CmpOp::Le), Just(CmpOp::Gt), Just(CmpOp::Ge)];
    let leaf = prop_oneof![
        any::<bool>().prop_map(Predicate::Const),
        (metric, op, -10.0..200.0f64).prop_map(|(m, o, v)| Predicate::cmp(m, o, v)),
    ];
    leaf.prop_recursive(2, 6, 3, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 1..3).prop_map(Predicate::All),
            proptest::collection::vec(inner.clone(), 1..3).prop_map(Predicate::Any),
            inner.prop_map(|p| Predicate::Not(Box::new(p))),
        ]
    })
    .boxed()
}

fn arb_primitive() -> impl Strategy<Value = PrimitiveId> {
    prop_oneof![Just(PrimitiveId::FormationControl), Just(PrimitiveId::Defend)]
}

fn arb_pipeline() -> BoxedStrategy<Pipeline> {
    (arb_primitive(), 0usize..5)
        .prop_flat_map(|(p, n)| {
            let stages: Vec<_> = (0..n)
                .map(|k| {
                    (arb_spec(p, format!("S{k}")), proptest::option::of(arb_guard())).prop_map(|(s, g)| match g {
                        Some(g) => s.with_guard(g),
                        None => s,
                    })
                })
                .collect();
            stages.prop_map(move |stages| Pipeline { primitive: p, stages })
        })
        .boxed()
}

fn arb_obs() -> impl Strategy<Value = MetaObservation> {
    (0.0..100.0f64, 0.0..600.0f64, 0.0..200.0f64, 0.0..1.0f64).prop_map(|(s, e, h, r)| MetaObservation {
        s_overall: s,
        e_radius: e,
        sigma_height: h,
        infected_report_rate: r,
        ..MetaObservation::default()
    })
}

fn effects_of(p: &Pipeline, o: &MetaObservation) -> Result<Effects, ProgramError> {
    p.interpret(&ControlParams::default(), o)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn and_is_associative((p, a, b) in arb_primitive().prop_flat_map(|prim| (
        Just(Pipeline::empty(prim)),
        arb_spec(prim, "A".into()),
        arb_spec(prim, "B".into()),
    ))) {
        let left = p.compose(&Edit::And(a.clone()), reg()).unwrap()
            .compose(&Edit::And(b.clone()), reg()).unwrap();
        let mut expected = p.stages.clone();
        expected.push(a);
        expected.push(b);
        prop_assert_eq!(left.stages, expected);
    }

    #[test]
    fn mod_is_idempotent(p in arb_pipeline(), pick in any::<prop::sample::Index>(), scale in 0.0..1.0f64) {
        prop_assume!(!p.stages.is_empty());
        let stage = &p.stages[pick.index(p.stages.len())];
        let ts = reg().template(stage.template);
        let name = ts.params.keys().next().unwrap().clone();
        let r = &ts.params[&name];
        let mut v = r.min + (r.max.min(1000.0) - r.min) * scale;
        if r.integer { v = v.round(); }
        let edit = Edit::Mod {
            program_id: stage.program_id.clone(),
            patch: [(name, v)].into_iter().collect(),
        };
        let once = p.compose(&edit, reg()).unwrap();
        let twice = once.compose(&edit, reg()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn add_then_del_restores(p in arb_pipeline(), k in 0usize..4) {
        let pool: Vec<_> = reg().pool.iter().filter(|s| s.primitive == p.primitive).collect();
        let spec = pool[k % pool.len()].clone();
        let q = p.compose(&Edit::Add(spec.clone()), reg()).unwrap();
        let r = q.compose(&Edit::Del { program_id: spec.program_id }, reg()).unwrap();
        prop_assert_eq!(r, p);
    }

    #[test]
    fn serialize_parse_roundtrip(p in arb_pipeline()) {
        let back = Pipeline::parse(&p.serialize(), reg()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn false_guard_is_neutral(p in arb_pipeline(), o in arb_obs()) {
        let prim = p.primitive;
        let spec = proptest::test_runner::TestRunner::deterministic()
            .run_one_value(&arb_spec(prim, "N".into()));
        let guarded = spec.with_guard(Predicate::Const(false));
        let q = p.compose(&Edit::Or(guarded), reg()).unwrap();
        prop_assert_eq!(effects_of(&p, &o), effects_of(&q, &o));
    }

    #[test]
    fn interpretation_is_deterministic(p in arb_pipeline(), o in arb_obs()) {
        prop_assert_eq!(effects_of(&p, &o), effects_of(&p.clone(), &o));
    }
}

trait RunOne {
    fn run_one_value<S: Strategy>(&mut self, s: &S) -> S::Value;
}

impl RunOne for proptest::test_runner::TestRunner {
    fn run_one_value<S: Strategy>(&mut self, s: &S) -> S::Value {
        use proptest::strategy::ValueTree;
        s.new_tree(self).unwrap().current()
    }
}
