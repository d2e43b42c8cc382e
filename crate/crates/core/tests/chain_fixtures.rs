//! Scripted fixtures and the four-step chain, end to end.

use biometaphor::affect::{prototypical_va_pairs, CircumplexGeometry, VaPair};
use biometaphor::backend::{make_scripted, Reasoner, ScriptedFixture};
use biometaphor::metaphor::{
    builtin_scenes, check_nonintrusion, run_cot, validate_step_output, ChainMode, CotEngine,
    CotPolicy, MetaphorType, RuleEngineBackend, SceneContext, StepOutput, StepStatus, Taxonomy,
    TraceStatus,
};

fn scene(id: &str) -> SceneContext {
    SceneContext::builtin(id).unwrap()
}

#[test]
fn every_fixture_entry_validates_for_its_step() {
    let scenes = builtin_scenes();
    let scene_ids: Vec<&str> = scenes.iter().map(|s| s.scene_id.as_str()).collect();
    for name in ["scripted-a", "scripted-b"] {
        let fixture = ScriptedFixture::builtin(name).unwrap();
        assert!(fixture.missing_keys(&scene_ids).is_empty(), "{name}");
        for key in fixture.keys() {
            let raw = fixture.get(key).unwrap();
            let out =
                validate_step_output(key.step, raw).unwrap_or_else(|r| panic!("{name} {key}: {r}"));
            match out {
                StepOutput::Plan(p) => assert!(p.violations().is_empty(), "{name} {key}"),
                StepOutput::Scene(s) => {
                    let ctx = scene(&key.scene_id);
                    assert_eq!(check_nonintrusion(&s, &ctx), None, "{name} {key}");
                }
                _ => {}
            }
        }
    }
}

#[test]
fn demonstration_pairs_reproduce_quoted_cues() {
    let engine = CotEngine::default();
    let policy = CotPolicy::default();
    let a = make_scripted(ScriptedFixture::builtin("scripted-a").unwrap());

    let t = run_cot(
        &VaPair::new(0.854, 0.854).unwrap(),
        &scene("concert"),
        &a,
        &engine,
        &policy,
    )
    .unwrap();
    let plan = t.plan().unwrap();
    let types: Vec<MetaphorType> = plan.types().collect();
    assert_eq!(
        types,
        [
            MetaphorType::OntologicalEntitySubstance,
            MetaphorType::Orientational
        ]
    );
    assert!(plan
        .visual_cues
        .iter()
        .any(|c| c.description == "softly rising wisps of light"));
    let prompt = t.prompt.as_ref().unwrap();
    assert_eq!(
        prompt.main_scene(),
        "Concert stage alive with dynamic lighting"
    );

    let t = run_cot(
        &VaPair::new(0.146, 0.146).unwrap(),
        &scene("concert"),
        &a,
        &engine,
        &policy,
    )
    .unwrap();
    let plan = t.plan().unwrap();
    assert!(plan
        .visual_cues
        .iter()
        .any(|c| c.description.contains("blue mist")));
    assert!(plan.visual_cues.iter().any(|c| {
        c.description.contains("below eye level")
            && c.dynamics
                .as_deref()
                .is_some_and(|d| d.contains("downward"))
    }));
}

#[test]
fn successful_traces_replay_to_identical_structures() {
    let engine = CotEngine::default();
    let pairs = prototypical_va_pairs(8, &CircumplexGeometry::default()).unwrap();
    for name in ["scripted-a", "scripted-b"] {
        for mode in [ChainMode::Conversational, ChainMode::Isolated] {
            let backend = make_scripted(ScriptedFixture::builtin(name).unwrap());
            let policy = CotPolicy {
                chain_mode: mode,
                ..CotPolicy::default()
            };
            for va in &pairs {
                for s in builtin_scenes() {
                    let trace = run_cot(va, &s, &backend, &engine, &policy).unwrap();
                    assert_eq!(trace.status, TraceStatus::Ok);
                    assert_eq!(trace.steps.len(), 4);
                    // Round-trip the trace through JSON, then replay its requests.
                    let text = serde_json::to_string(&trace).unwrap();
                    let loaded: biometaphor::metaphor::CoTTrace =
                        serde_json::from_str(&text).unwrap();
                    assert_eq!(loaded.content_id(), trace.trace_id);
                    for step in &loaded.steps {
                        assert_eq!(step.status, StepStatus::Ok);
                        let attempt = step.attempts.last().unwrap();
                        let raw = backend.complete(&attempt.request).unwrap();
                        let parsed = validate_step_output(step.step, &raw).unwrap();
                        assert_eq!(Some(&parsed), step.parsed.as_ref());
                    }
                    // Re-running gives the same content id.
                    let again = run_cot(va, &s, &backend, &engine, &policy).unwrap();
                    assert_eq!(again.trace_id, trace.trace_id);
                }
            }
        }
    }
}

#[test]
fn taxonomy_is_closed_over_fixture_and_rule_plans() {
    let taxonomy = Taxonomy::builtin();
    let mut seen = std::collections::BTreeSet::new();
    for name in ["scripted-a", "scripted-b"] {
        let fixture = ScriptedFixture::builtin(name).unwrap();
        for key in fixture.keys().filter(|k| k.step.number() == 2) {
            if let Ok(StepOutput::Plan(p)) =
                validate_step_output(key.step, fixture.get(key).unwrap())
            {
                for t in p.types() {
                    assert!(MetaphorType::ALL.contains(&t));
                    assert!(!taxonomy.definition(t).is_empty());
                    seen.insert(t);
                }
            }
        }
    }
    assert_eq!(seen.len(), 6, "fixtures exercise every type: {seen:?}");
}

#[test]
fn rule_engine_runs_custom_scenes() {
    let custom = SceneContext {
        scene_id: "lecture".into(),
        description: "A lecture hall during a keynote".into(),
        primary_activity: "listening to the keynote".into(),
        style_notes: Some("muted".into()),
    };
    let t = run_cot(
        &VaPair::new(0.3, 0.2).unwrap(),
        &custom,
        &RuleEngineBackend::default(),
        &CotEngine::default(),
        &CotPolicy::default(),
    )
    .unwrap();
    assert!(t
        .adapted()
        .unwrap()
        .nonintrusion_statement
        .contains("listening to the keynote"));
    assert_eq!(
        t.prompt.unwrap().main_scene(),
        "A lecture hall during a keynote"
    );
}
