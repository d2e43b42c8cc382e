//! `biometaphor` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use biometaphor::backend::transport::UreqTransport;
use biometaphor::metaphor::{build_step_prompt, SceneContext, StepContext, StepId};
use biometaphor::package::validate_package;
use biometaphor::pipeline::{CellStatus, Pipeline, PipelineConfig, ReasonerConfig};
use biometaphor::{infer_state, prototypical_va_pairs, VaPair};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "biometaphor",
    version,
    about = "Turn valence-arousal readings into metaphorical VR panoramas"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalOpts {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Use the scripted reasoning fixtures and the stub image backend.
    #[arg(long, global = true)]
    mock: bool,
    /// Output directory (overrides config and environment).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Global seed (overrides config and environment).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Show what would be sent without calling any backend.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print evenly spaced prototypical V-A pairs on the circumplex rim.
    Dataset {
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Print the inner state inferred for one V-A pair.
    Infer { valence: f64, arousal: f64 },
    /// Run one pair through the full pipeline and write a scene package.
    Generate {
        valence: f64,
        arousal: f64,
        /// Scene id from the configuration (gallery, sports, concert by default).
        #[arg(long)]
        scene: String,
        /// JSON file with one scene or a list of scenes to choose from.
        #[arg(long, value_name = "PATH")]
        scene_file: Option<PathBuf>,
        /// Reasoning backend id; defaults to the first configured backend.
        #[arg(long)]
        backend: Option<String>,
    },
    /// Run every (backend × pair × scene) cell and write report.json.
    Batch,
    /// Check a package directory and print its summary.
    ValidatePackage { dir: PathBuf },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn load_config(g: &GlobalOpts) -> Result<PipelineConfig, CliError> {
    let mut config = match &g.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None if g.mock => PipelineConfig::mock(),
        None => PipelineConfig::default(),
    };
    if g.mock {
        config = config.into_mock();
    }
    config
        .apply_env(|k| std::env::var(k).ok())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn va(valence: f64, arousal: f64) -> Result<VaPair, CliError> {
    VaPair::new(valence, arousal).map_err(|e| CliError::Usage(e.to_string()))
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn pick_scene(
    config: &PipelineConfig,
    scene_id: &str,
    scene_file: Option<&PathBuf>,
) -> Result<SceneContext, CliError> {
    let scenes = match scene_file {
        Some(path) => SceneContext::load_all(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => config.scenes.clone(),
    };
    scenes
        .into_iter()
        .find(|s| s.scene_id == scene_id)
        .ok_or_else(|| CliError::Usage(format!("unknown scene {scene_id:?}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.global)?;
    match cli.command {
        Command::Dataset { count } => {
            if count == 0 {
                return Err(CliError::Usage("--count must be at least 1".into()));
            }
            let pairs = prototypical_va_pairs(count, &config.geometry)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let rows: Vec<[f64; 2]> = pairs.iter().map(|p| [p.valence(), p.arousal()]).collect();
            print_json(&rows);
        }
        Command::Infer { valence, arousal } => {
            let pair = va(valence, arousal)?;
            let engine = biometaphor::metaphor::CotEngine::default();
            print_json(&infer_state(&pair, &config.geometry, &engine.octants));
        }
        Command::Generate {
            valence,
            arousal,
            scene,
            scene_file,
            backend,
        } => {
            let pair = va(valence, arousal)?;
            let scene = pick_scene(&config, &scene, scene_file.as_ref())?;
            if cli.global.dry_run {
                return dry_run_generate(&config, pair, scene, backend.as_deref());
            }
            let pipeline =
                Pipeline::new(config, Arc::new(UreqTransport::new())).map_err(CliError::runtime)?;
            let index = match &backend {
                Some(id) => pipeline
                    .backend_index(id)
                    .ok_or_else(|| CliError::Usage(format!("unknown backend {id:?}")))?,
                None => 0,
            };
            let cell = pipeline.cell(index, pair, scene);
            let report = pipeline.run_cells(&[cell]).map_err(CliError::runtime)?;
            let cell = &report.cells[0];
            print_json(cell);
            if cell.status == CellStatus::Failed {
                return Err(CliError::Runtime(
                    cell.error.clone().unwrap_or_else(|| "cell failed".into()),
                ));
            }
        }
        Command::Batch => {
            if cli.global.dry_run {
                return dry_run_batch(&config);
            }
            let pipeline =
                Pipeline::new(config, Arc::new(UreqTransport::new())).map_err(CliError::runtime)?;
            let report = pipeline.run_batch().map_err(CliError::runtime)?;
            print_json(&json!({
                "counts": report.counts,
                "wall_time_ms": report.wall_time_ms,
                "report": pipeline.config().output_dir.join(biometaphor::pipeline::REPORT_FILE),
            }));
        }
        Command::ValidatePackage { dir } => {
            let pkg = validate_package(&dir).map_err(CliError::runtime)?;
            print_json(&pkg);
        }
    }
    Ok(())
}

/// Prints the Step-1 request that `generate` would send first.
fn dry_run_generate(
    config: &PipelineConfig,
    pair: VaPair,
    scene: SceneContext,
    backend: Option<&str>,
) -> Result<(), CliError> {
    let chosen = match backend {
        Some(id) => config
            .reasoning
            .iter()
            .find(|r| r.backend_id() == id)
            .ok_or_else(|| CliError::Usage(format!("unknown backend {id:?}")))?,
        None => config
            .reasoning
            .first()
            .ok_or_else(|| CliError::Usage("no reasoning backend configured".into()))?,
    };
    let (temperature, max_tokens) = match chosen {
        ReasonerConfig::Remote(c) => (c.temperature, c.max_tokens),
        ReasonerConfig::Scripted { temperature, .. } => (*temperature, 2048),
    };
    let engine = biometaphor::metaphor::CotEngine {
        geometry: config.geometry,
        ..Default::default()
    };
    let state = infer_state(&pair, &engine.geometry, &engine.octants);
    let ctx = StepContext::new(pair, state, scene, temperature, max_tokens);
    let request = build_step_prompt(
        StepId::InnerState,
        &ctx,
        &engine.templates,
        &engine.taxonomy,
    )
    .map_err(CliError::runtime)?;
    println!("# backend: {}", chosen.backend_id());
    println!("# system\n{}\n", request.system_text);
    println!("# step 1\n{}", request.last_user_text());
    Ok(())
}

fn dry_run_batch(config: &PipelineConfig) -> Result<(), CliError> {
    let pairs = config
        .dataset
        .pairs(&config.geometry)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut backends: Vec<&str> = config.reasoning.iter().map(|r| r.backend_id()).collect();
    if config.use_rule_engine {
        backends.push("rule-engine");
    }
    let scenes: Vec<&str> = config.scenes.iter().map(|s| s.scene_id.as_str()).collect();
    print_json(&json!({
        "backends": backends,
        "pairs": pairs.iter().map(|p| [p.valence(), p.arousal()]).collect::<Vec<_>>(),
        "scenes": scenes,
        "cells": backends.len() * pairs.len() * scenes.len(),
        "output_dir": config.output_dir,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
