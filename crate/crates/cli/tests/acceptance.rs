//! Acceptance suite: ten end-to-end criteria, one `[PASS]`/`[FAIL]` line each.
//!
//! Runs with `cargo test --test acceptance`. Exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use biometaphor::backend::transport::RecordingTransport;
use biometaphor::backend::{make_scripted, ScriptedFixture};
use biometaphor::metaphor::{
    builtin_scenes, extract_block, run_cot, validate_step_output, CoTTrace, CotEngine, CotPolicy,
    StepId, StepOutput, StepStatus,
};
use biometaphor::package::{decode_image, read_manifest, validate_package, validate_panorama};
use biometaphor::pipeline::{
    read_runs, CellStatus, Pipeline, PipelineConfig, ReasonerConfig, RunReport, Stage, REPORT_FILE,
    RUNS_FILE,
};
use biometaphor::prompt::{assemble, flatten, PromptError, PromptSections, SEPARATOR};
use biometaphor::{
    aggregate_group, infer_state, polar_of, prototypical_va_pairs, Band, CircumplexGeometry,
    Family, OctantTable, VaPair,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

// Pinned tolerances and sizes.
const ANCHOR_TOL: f64 = 1e-3;
const DATASET_MAX: Duration = Duration::from_secs(1);
const BATCH_MAX: Duration = Duration::from_secs(60);
const INFER_REPEATS: usize = 100;
const BATCH_CELLS: usize = 48;
const FLATTEN_CASES: u32 = 1000;
const MAX_REPAIRS: u32 = 2;
const ROUND_TRIP_TOL_DEG: f64 = 1e-6;
const ANGLE_CASES: u32 = 10_000;
const MULTISET_CASES: u32 = 1000;

const METAPHOR_TYPES: [&str; 6] = [
    "Orientational",
    "Ontological_EntitySubstance",
    "Ontological_Container",
    "Ontological_Personification",
    "Ontological_Metonymy",
    "Structural",
];

const PRIMARY_ACTIVITIES: [(&str, &str); 3] = [
    ("gallery", "viewing artworks"),
    ("sports", "watching the table tennis match"),
    ("concert", "watching the live performance"),
];

const BROKEN_KEY: &str = "step2|excitement|concert";

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_biometaphor"));
    for var in [
        "BIOMETAPHOR_OUTPUT_DIR",
        "BIOMETAPHOR_CACHE_DIR",
        "BIOMETAPHOR_SEED",
    ] {
        c.env_remove(var);
    }
    c
}

/// The shared mock batch that criteria 3–8 inspect.
struct MockRun {
    _dir: tempfile::TempDir,
    out: PathBuf,
    report: RunReport,
    elapsed: Duration,
    network_calls: usize,
    traces: Vec<CoTTrace>,
}

fn mock_run() -> Result<&'static MockRun, String> {
    static RUN: OnceLock<Result<MockRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let out = dir.path().join("out");
        let config = PipelineConfig {
            output_dir: out.clone(),
            max_repairs: MAX_REPAIRS,
            ..PipelineConfig::mock()
        };
        let recorder = Arc::new(RecordingTransport::new());
        let started = Instant::now();
        let pipeline = Pipeline::new(config, recorder.clone()).map_err(|e| e.to_string())?;
        let report = pipeline.run_batch().map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();
        let traces = read_runs(&out.join(RUNS_FILE))
            .map_err(|e| e.to_string())?
            .into_iter()
            .filter_map(|r| r.trace)
            .collect();
        Ok(MockRun {
            _dir: dir,
            out,
            report,
            elapsed,
            network_calls: recorder.count(),
            traces,
        })
    })
    .as_ref()
    .map_err(|e| format!("mock batch did not run: {e}"))
}

fn mock_traces() -> Result<&'static [CoTTrace], String> {
    let run = mock_run()?;
    ensure(
        run.traces.len() == BATCH_CELLS,
        format!("expected {BATCH_CELLS} traces, found {}", run.traces.len()),
    )?;
    Ok(&run.traces)
}

fn step_raw(trace: &CoTTrace, step: StepId) -> Result<&str, String> {
    trace
        .steps
        .iter()
        .find(|s| s.step == step)
        .and_then(|s| s.last_raw())
        .ok_or_else(|| format!("trace {} has no step {step} output", trace.trace_id))
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let out = bin()
        .args(["dataset", "--count", "8"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(out.status.success(), "dataset exited non-zero")?;
    let rows: Vec<[f64; 2]> = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    ensure(rows.len() == 8, format!("{} pairs", rows.len()))?;
    for (v, a) in [(0.854, 0.854), (0.146, 0.146)] {
        ensure(
            rows.iter()
                .any(|r| (r[0] - v).abs() <= ANCHOR_TOL && (r[1] - a).abs() <= ANCHOR_TOL),
            format!("({v}, {a}) missing from {rows:?}"),
        )?;
    }
    ensure(elapsed < DATASET_MAX, format!("took {elapsed:?}"))?;
    Ok(format!("8 pairs in {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let cases = [
        ((0.854, 0.854), Family::PositiveActivated, Some(Band::High)),
        ((0.146, 0.146), Family::NegativeDeactivated, Some(Band::Low)),
        ((0.14, 0.85), Family::NegativeActivated, Some(Band::High)),
        ((0.5, 0.5), Family::Neutral, None),
    ];
    let geometry = CircumplexGeometry::default();
    let table = OctantTable::default();
    for ((v, a), family, band) in cases {
        let va = VaPair::new(v, a).map_err(|e| e.to_string())?;
        let first = infer_state(&va, &geometry, &table);
        ensure(
            first.family == family,
            format!("({v}, {a}) -> {:?}", first.family),
        )?;
        if let Some(band) = band {
            ensure(
                first.intensity_label == band,
                format!("({v}, {a}) -> {:?}", first.intensity_label),
            )?;
        }
        for _ in 0..INFER_REPEATS {
            ensure(
                infer_state(&va, &geometry, &table) == first,
                "non-deterministic inference",
            )?;
        }
    }
    Ok(format!("4 pairs x {INFER_REPEATS} repeats"))
}

fn criterion_3() -> Outcome {
    let run = mock_run()?;
    let c = run.report.counts;
    ensure(
        c.total == BATCH_CELLS && run.report.cells.len() == BATCH_CELLS,
        format!("{c:?}"),
    )?;
    ensure(c.ok == BATCH_CELLS, format!("{c:?}"))?;
    let on_disk: RunReport = serde_json::from_slice(
        &std::fs::read(run.out.join(REPORT_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(on_disk.cells.len() == BATCH_CELLS, "report.json cell count")?;
    let mut dirs = BTreeSet::new();
    for cell in &run.report.cells {
        let dir = cell.package_dir.as_ref().ok_or("cell without package")?;
        validate_package(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        dirs.insert(dir.clone());
    }
    ensure(
        dirs.len() == BATCH_CELLS,
        format!("{} distinct packages", dirs.len()),
    )?;
    ensure(
        run.network_calls == 0,
        format!("{} network requests", run.network_calls),
    )?;
    ensure(run.elapsed < BATCH_MAX, format!("took {:?}", run.elapsed))?;
    Ok(format!(
        "48 cells, 48 valid packages, 0 requests, {:.2?}",
        run.elapsed
    ))
}

fn criterion_4() -> Outcome {
    let mut seen = BTreeSet::new();
    let mut cues = 0;
    for trace in mock_traces()? {
        let raw = step_raw(trace, StepId::Metaphor)?;
        let block = extract_block(raw).ok_or("step 2 output has no JSON block")?;
        let value: serde_json::Value = serde_json::from_str(block).map_err(|e| e.to_string())?;
        let types = value["metaphor_types"]
            .as_array()
            .ok_or("metaphor_types missing")?;
        ensure(!types.is_empty(), "no metaphor types")?;
        for t in types {
            let name = t["type"].as_str().unwrap_or_default();
            ensure(
                METAPHOR_TYPES.contains(&name),
                format!("type {name:?} outside taxonomy"),
            )?;
            seen.insert(name.to_string());
        }
        let n = value["visual_cues"].as_array().map_or(0, Vec::len);
        ensure(n > 0, "no visual cues")?;
        let mapped: BTreeSet<u64> = value["mapping"]
            .as_array()
            .ok_or("mapping missing")?
            .iter()
            .filter_map(|m| m["cue_index"].as_u64())
            .collect();
        for i in 0..n as u64 {
            ensure(
                mapped.contains(&i),
                format!("cue {i} unmapped in {}", trace.trace_id),
            )?;
        }
        let plan = trace.plan().ok_or("no parsed plan")?;
        ensure(
            plan.violations().is_empty(),
            format!("{:?}", plan.violations()),
        )?;
        cues += n;
    }
    Ok(format!(
        "{BATCH_CELLS} plans, {cues} cues, {} distinct types",
        seen.len()
    ))
}

fn oracle_flatten(segments: &[String], max_chars: usize) -> Option<String> {
    let joined = |k: usize| segments[..k].join("; ");
    let mut best = None;
    for k in 2..=segments.len() {
        if joined(k).chars().count() <= max_chars {
            best = Some(joined(k));
        } else {
            break;
        }
    }
    best
}

fn criterion_5() -> Outcome {
    for trace in mock_traces()? {
        let raw = step_raw(trace, StepId::Prompt)?;
        match validate_step_output(StepId::Prompt, raw) {
            Ok(StepOutput::Prompt(p)) => ensure(
                !p.main_scene().is_empty() && !p.metaphorical_elements().is_empty(),
                "empty mandatory layer",
            )?,
            other => return Err(format!("step 4 did not parse: {other:?}")),
        }
    }
    let phrase = "[a-zé✓]{1,8}( [a-zé✓]{1,8}){0,4}";
    let strategy = (
        phrase,
        prop::collection::vec(phrase, 1..5),
        prop::collection::vec(phrase, 0..6),
        0usize..300,
    );
    runner(FLATTEN_CASES)
        .run(&strategy, |(main, elements, modifiers, budget)| {
            let sections = PromptSections {
                main_scene: main.clone(),
                metaphorical_elements: elements.clone(),
                detailed_modifiers: modifiers.clone(),
            };
            let prompt = assemble(&sections).unwrap();
            let segments: Vec<String> = std::iter::once(main)
                .chain(elements)
                .chain(modifiers)
                .collect();
            match (flatten(&prompt, budget), oracle_flatten(&segments, budget)) {
                (Ok(got), Some(want)) => {
                    prop_assert_eq!(&got, &want);
                    prop_assert!(got.chars().count() <= budget);
                    let parts: Vec<&str> = got.split(SEPARATOR).collect();
                    prop_assert_eq!(&parts[..], &segments[..parts.len()]);
                }
                (Err(PromptError::BudgetTooSmall { .. }), None) => {}
                (got, want) => prop_assert!(false, "flatten {:?} vs oracle {:?}", got, want),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{BATCH_CELLS} step-4 outputs, {FLATTEN_CASES} flatten cases"
    ))
}

fn criterion_6() -> Outcome {
    let activities: BTreeMap<&str, &str> = PRIMARY_ACTIVITIES.into_iter().collect();
    for trace in mock_traces()? {
        let adapted = trace.adapted().ok_or("no adapted scene")?;
        let activity = activities
            .get(trace.scene.scene_id.as_str())
            .ok_or("unexpected scene")?;
        ensure(
            adapted.nonintrusion_statement.contains(activity),
            format!("{:?} lacks {activity:?}", adapted.nonintrusion_statement),
        )?;
    }
    Ok(format!("{BATCH_CELLS} adapted scenes"))
}

fn png_size(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    Some((be(16), be(20)))
}

type CellId = (String, u64, u64, String);

fn package_ids(report: &RunReport) -> BTreeMap<CellId, Option<String>> {
    report
        .cells
        .iter()
        .map(|c| {
            (
                (
                    c.backend_id.clone(),
                    c.va.valence().to_bits(),
                    c.va.arousal().to_bits(),
                    c.scene_id.clone(),
                ),
                c.package_id.clone(),
            )
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let run = mock_run()?;
    for cell in &run.report.cells {
        let dir = cell.package_dir.as_ref().ok_or("cell without package")?;
        let manifest = read_manifest(dir).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(dir.join(&manifest.image.file)).map_err(|e| e.to_string())?;
        let (w, h) = png_size(&bytes).ok_or("panorama is not a PNG")?;
        ensure(w == 2 * h, format!("{w}x{h}"))?;
        ensure(
            validate_panorama(&bytes).map_err(|e| e.to_string())? == (w, h),
            "decode size",
        )?;
        ensure(
            decode_image(&STANDARD.encode(&bytes)).map_err(|e| e.to_string())? == bytes,
            "base64",
        )?;
    }

    // Second run through the binary, from a different working directory.
    let other = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = bin()
        .current_dir(other.path())
        .args(["batch", "--mock", "--out", "run2"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )?;
    let second: RunReport = serde_json::from_slice(
        &std::fs::read(other.path().join("run2").join(REPORT_FILE)).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (package_ids(&run.report), package_ids(&second));
    ensure(
        a.len() == BATCH_CELLS && a == b,
        "package ids differ between runs",
    )?;
    Ok(format!(
        "{BATCH_CELLS} packages decode at 2:1, ids stable across directories"
    ))
}

fn criterion_8() -> Outcome {
    let clean = mock_run()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut entries: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(include_str!("../../core/data/fixtures/scripted_a.json"))
            .map_err(|e| e.to_string())?;
    entries.insert(
        BROKEN_KEY.into(),
        "I would rather not answer in JSON.".into(),
    );
    let fixture = dir.path().join("broken.json");
    std::fs::write(&fixture, serde_json::to_string(&entries).unwrap())
        .map_err(|e| e.to_string())?;

    let mut config = PipelineConfig {
        output_dir: dir.path().join("out"),
        max_repairs: MAX_REPAIRS,
        ..PipelineConfig::mock()
    };
    config.reasoning[0] = ReasonerConfig::Scripted {
        backend_id: "scripted-a".into(),
        fixture: fixture.display().to_string(),
        temperature: 1.0,
    };
    let recorder = Arc::new(RecordingTransport::new());
    let report = Pipeline::new(config.clone(), recorder.clone())
        .and_then(|p| p.run_batch())
        .map_err(|e| e.to_string())?;
    ensure(report.counts.total == BATCH_CELLS, "batch aborted")?;
    ensure(report.counts.failed == 1, format!("{:?}", report.counts))?;

    let failed = report
        .cells
        .iter()
        .find(|c| c.status == CellStatus::Failed)
        .ok_or("no failed cell")?;
    ensure(
        failed.failed_stage == Some(Stage::Chain),
        format!("{:?}", failed.failed_stage),
    )?;
    ensure(
        failed.failed_step == Some(StepId::Metaphor),
        format!("{:?}", failed.failed_step),
    )?;
    let record = read_runs(&config.output_dir.join(RUNS_FILE))
        .map_err(|e| e.to_string())?
        .into_iter()
        .find(|r| r.cell.status == CellStatus::Failed)
        .ok_or("failed cell not recorded")?;
    let trace = record.trace.ok_or("failed cell has no trace")?;
    let step2 = trace
        .steps
        .iter()
        .find(|s| s.step == StepId::Metaphor)
        .ok_or("no step 2")?;
    ensure(
        step2.status == StepStatus::Failed,
        "step 2 not marked failed",
    )?;
    ensure(
        step2.repair_count == MAX_REPAIRS && step2.attempts.len() == MAX_REPAIRS as usize + 1,
        format!(
            "{} repairs, {} attempts",
            step2.repair_count,
            step2.attempts.len()
        ),
    )?;

    let (before, after) = (package_ids(&clean.report), package_ids(&report));
    let changed: Vec<_> = before
        .iter()
        .filter(|(k, v)| after.get(*k) != Some(v))
        .collect();
    ensure(
        changed.len() == 1,
        format!("{} cells changed", changed.len()),
    )?;
    Ok(format!(
        "{MAX_REPAIRS} repairs, step 2 failed, 47 siblings unchanged"
    ))
}

fn criterion_9() -> Outcome {
    let geometry = CircumplexGeometry::default();
    runner(ANGLE_CASES)
        .run(&(0.0f64..360.0), |angle| {
            let p = polar_of(&geometry.point_at(angle), &geometry);
            let d = (p.angle_deg - angle).rem_euclid(360.0);
            prop_assert!(
                d.min(360.0 - d) <= ROUND_TRIP_TOL_DEG,
                "{} -> {}",
                angle,
                p.angle_deg
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let multiset = prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.01f64..10.0), 1..40)
        .prop_flat_map(|items| (Just(items.clone()), Just(items).prop_shuffle()));
    runner(MULTISET_CASES)
        .run(&multiset, |(items, shuffled)| {
            let split = |xs: &[(f64, f64, f64)]| {
                let vas: Vec<VaPair> = xs
                    .iter()
                    .map(|&(v, a, _)| VaPair::new(v, a).unwrap())
                    .collect();
                let ws: Vec<f64> = xs.iter().map(|x| x.2).collect();
                (vas, ws)
            };
            let (va1, w1) = split(&items);
            let (va2, w2) = split(&shuffled);
            prop_assert_eq!(
                aggregate_group(&va1, None).unwrap(),
                aggregate_group(&va2, None).unwrap()
            );
            prop_assert_eq!(
                aggregate_group(&va1, Some(&w1)).unwrap(),
                aggregate_group(&va2, Some(&w2)).unwrap()
            );
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{ANGLE_CASES} angles, {MULTISET_CASES} multisets"))
}

fn criterion_10() -> Outcome {
    let engine = CotEngine::default();
    let policy = CotPolicy::default();
    let pairs = prototypical_va_pairs(8, &engine.geometry).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for name in ["scripted-a", "scripted-b"] {
        let backend = make_scripted(ScriptedFixture::builtin(name).map_err(|e| e.to_string())?);
        for va in &pairs {
            for scene in builtin_scenes() {
                let trace =
                    run_cot(va, &scene, &backend, &engine, &policy).map_err(|e| e.to_string())?;
                let claim = trace.claimed_state.as_ref().ok_or("no claim")?;
                ensure(
                    claim.family == trace.local_state.family,
                    format!(
                        "{name} {va} {}: {:?} vs {:?}",
                        scene.scene_id, claim.family, trace.local_state.family
                    ),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} claims agree with local family"))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("polar anchors", criterion_1),
        ("inference fidelity", criterion_2),
        ("protocol-scale batch", criterion_3),
        ("taxonomy closure", criterion_4),
        ("three-layer prompts", criterion_5),
        ("nonintrusion", criterion_6),
        ("packaging integrity", criterion_7),
        ("repair path", criterion_8),
        ("geometry properties", criterion_9),
        ("divergence audit", criterion_10),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failures += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failures} failed",
        criteria.len() - failures
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
