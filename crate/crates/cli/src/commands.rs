use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use log::{info, warn};

use terrapref::camera::SegmentationRenderer;
use terrapref::kinematics::PreferenceSet;
use terrapref::learner::{train, Classifier, Dataset, EpochStats};
use terrapref::planner::{judge_episode, run_episode, EpisodeLog, EpisodeOutcome, PolicyInfo};
use terrapref::scenarios;
use terrapref::sim::{record_demonstration, RecordingConfig, ScriptedOracle};
use terrapref::world::{Scenario, TerrainLabel};
use terrapref_teleop::{ServerConfig, TeleopServer, TeleopSession};

use crate::config::{resolve_scenario, resolve_scenarios, RunConfig};
use crate::draw;

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => create_dir(dir),
        _ => Ok(()),
    }
}

/// Every command keeps the configuration it ran with next to its output.
pub fn record_config(config: &RunConfig, command: &str) -> anyhow::Result<()> {
    create_dir(&config.paths.out)?;
    let path = config.paths.out.join(format!("{command}.config.toml"));
    let text = config.to_toml();
    log::debug!("resolved config:\n{text}");
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    info!("resolved config written to {}", path.display());
    Ok(())
}

fn dump_views(config: &RunConfig, worlds: &[Scenario], dir: &Path) -> anyhow::Result<()> {
    let renderer = SegmentationRenderer::new(&config.camera);
    for world in worlds {
        let seg = renderer.render(world, &world.start_pose);
        draw::dump_segmentation(&seg, dir, &world.name)?;
    }
    info!("camera views at the start poses written to {}", dir.display());
    Ok(())
}

pub fn collect_scripted(config: &RunConfig, dump_camera: Option<&Path>) -> anyhow::Result<Dataset> {
    let world = resolve_scenario(&config.collect.scenario)?;
    let prefset = PreferenceSet::build(&config.preference)?;
    let mut oracle = ScriptedOracle::new(config.oracle.penalties)?;
    let out = config.paths.dataset();
    create_parent(&out)?;
    if let Some(dir) = dump_camera {
        dump_views(config, std::slice::from_ref(&world), dir)?;
    }
    let recording = RecordingConfig {
        duration: config.collect.duration,
        path_window: config.episode.path_window,
    };
    info!("recording the scripted oracle on {}", world.name);
    let dataset = record_demonstration(&world, &prefset, &config.camera, &mut oracle, &recording)?;
    dataset.save(&out)?;
    println!("{} records from {} written to {}", dataset.len(), world.name, out.display());
    Ok(dataset)
}

pub async fn collect_serve(config: &RunConfig, dump_camera: Option<&Path>) -> anyhow::Result<Dataset> {
    let world = resolve_scenario(&config.collect.scenario)?;
    let prefset = PreferenceSet::build(&config.preference)?;
    let out = config.paths.dataset();
    create_parent(&out)?;
    if let Some(dir) = dump_camera {
        dump_views(config, std::slice::from_ref(&world), dir)?;
    }
    let session = TeleopSession::new(world.name.clone(), world, prefset, config.camera.clone())?;
    let server_config = ServerConfig {
        static_dir: config.serve.static_dir.clone(),
        dataset_path: Some(out),
        time_scale: config.serve.time_scale,
        stall_timeout: Duration::from_millis(config.serve.stall_timeout_ms),
        ..ServerConfig::default()
    };
    let server = TeleopServer::bind(config.serve.addr.as_str(), session, server_config).await?;
    let addr = server.local_addr()?;
    let shutdown = interrupted()?;
    println!("teleop websocket at ws://{addr}/teleop; press Ctrl-C to stop");
    let report = server.run(shutdown).await?;
    match &report.dataset_path {
        Some(path) => println!(
            "session finished ({}): {} records written to {}",
            report.reason,
            report.dataset.len(),
            path.display()
        ),
        None => println!("session finished ({}): {} records", report.reason, report.dataset.len()),
    }
    Ok(report.dataset)
}

/// Resolves on Ctrl-C. The handler is in place once this returns.
#[cfg(unix)]
fn interrupted() -> anyhow::Result<impl std::future::Future<Output = ()>> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut sigint = signal(SignalKind::interrupt())?;
    Ok(async move {
        sigint.recv().await;
    })
}

#[cfg(not(unix))]
fn interrupted() -> anyhow::Result<impl std::future::Future<Output = ()>> {
    Ok(async {
        let _ = tokio::signal::ctrl_c().await;
    })
}

pub fn train_model(config: &RunConfig, dataset_path: Option<&Path>) -> anyhow::Result<()> {
    let dataset_path = dataset_path.map(Path::to_path_buf).unwrap_or_else(|| config.paths.dataset());
    let dataset = Dataset::load(&dataset_path).with_context(|| format!("loading {}", dataset_path.display()))?;
    if dataset.is_empty() {
        bail!("{} has no records", dataset_path.display());
    }
    let model_path = config.paths.model();
    create_parent(&model_path)?;
    info!("training on {} records from {}", dataset.len(), dataset_path.display());
    let report = train(&dataset, &config.training)?;

    let mut history = vec![report.initial];
    history.extend(report.history.iter().copied());
    let out = &config.paths.out;
    std::fs::write(out.join("history.csv"), history_csv(&history)).context("writing history.csv")?;
    draw::save_rgb(&draw::render_loss(&history, 640, 400), &out.join("loss.png"))?;
    report.selected_model().save(&model_path)?;

    for s in &report.history {
        println!(
            "epoch {:2}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}",
            s.epoch, s.train.loss, s.train.accuracy, s.validation.loss, s.validation.accuracy
        );
    }
    let best = report.selected_stats();
    println!(
        "kept epoch {} (val loss {:.4}, acc {:.3}); model written to {}",
        best.epoch,
        best.validation.loss,
        best.validation.accuracy,
        model_path.display()
    );
    Ok(())
}

/// `epoch,train_loss,train_accuracy,validation_loss,validation_accuracy`,
/// one row per epoch, epoch 0 being the untrained model.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut csv = String::from("epoch,train_loss,train_accuracy,validation_loss,validation_accuracy\n");
    for s in history {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            s.epoch, s.train.loss, s.train.accuracy, s.validation.loss, s.validation.accuracy
        );
    }
    csv
}

pub struct EvalRow {
    pub scenario: String,
    pub terrains: String,
    pub expected: String,
    pub planner: String,
    pub status: String,
    pub passed: bool,
}

fn preference_name(label: TerrainLabel) -> &'static str {
    match label {
        TerrainLabel::Background => "avoid",
        other => other.name(),
    }
}

pub fn eval_row(world: &Scenario, outcome: &EpisodeOutcome) -> EvalRow {
    let mut terrains: Vec<TerrainLabel> = world.patches.iter().map(|p| p.label).collect();
    terrains.sort();
    terrains.dedup();
    let verdict = judge_episode(world, outcome);
    let mut problems = verdict.problems.clone();
    if verdict.preference_matches == Some(false) {
        problems.insert(0, "preference mismatch".into());
    }
    let status = if problems.is_empty() {
        "ok".to_string()
    } else {
        problems.join("; ")
    };
    EvalRow {
        scenario: world.name.clone(),
        terrains: terrains.iter().map(|t| t.name()).collect::<Vec<_>>().join("+"),
        expected: verdict.expected.map_or("n/a", preference_name).to_string(),
        planner: preference_name(verdict.shown).to_string(),
        status,
        passed: verdict.passed(),
    }
}

pub fn render_table(rows: &[EvalRow]) -> String {
    let header = ["scenario", "terrains", "expected", "planner", "result", "status"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.scenario.clone(),
                r.terrains.clone(),
                r.expected.clone(),
                r.planner.clone(),
                if r.passed { "pass" } else { "FAIL" }.to_string(),
                r.status.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let padded: Vec<String> = cols.iter().zip(widths).map(|(c, w)| format!("{c:w$}")).collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&header);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Runs every selected scenario with the model; returns whether all passed.
pub fn eval(
    config: &RunConfig,
    model_path: Option<&Path>,
    selectors: &[String],
    dump_camera: Option<&Path>,
) -> anyhow::Result<bool> {
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| config.paths.model());
    let model = Classifier::load(&model_path).with_context(|| format!("loading model {}", model_path.display()))?;
    let selectors = if selectors.is_empty() {
        &config.eval.scenarios[..]
    } else {
        selectors
    };
    let worlds = resolve_scenarios(selectors)?;
    let prefset = PreferenceSet::build(&config.preference)?;
    let episodes = config.paths.out.join("episodes");
    create_dir(&episodes)?;
    if let Some(dir) = dump_camera {
        dump_views(config, &worlds, dir)?;
    }

    let mut rows = Vec::new();
    for world in &worlds {
        info!("running {}", world.name);
        let log = run_episode(world, &model, &prefset, &config.camera, &config.episode)?;
        log.save(episodes.join(format!("{}.jsonl", world.name)))?;
        rows.push(eval_row(world, &log.outcome));
    }
    let table = render_table(&rows);
    let passed = rows.iter().filter(|r| r.passed).count();
    print!("{table}");
    println!("{passed}/{} passed; episode logs in {}", rows.len(), episodes.display());
    std::fs::write(config.paths.out.join("eval.txt"), &table).context("writing eval.txt")?;
    Ok(passed == rows.len())
}

/// Renders each log as a top-down PNG in `<out>/replay`. A truncated log is
/// drawn as far as it goes, with a warning.
pub fn replay(config: &RunConfig, logs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    if logs.is_empty() {
        bail!("no episode logs given");
    }
    let dir = config.paths.out.join("replay");
    create_dir(&dir)?;
    let mut written = Vec::new();
    for path in logs {
        let file = std::fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
        let log = EpisodeLog::read_partial(file).with_context(|| format!("reading {}", path.display()))?;
        if log.ticks.is_empty() {
            bail!("{} has no ticks to replay", path.display());
        }
        if let Some(why) = &log.truncated {
            warn!("{} is truncated ({why}); drawing its first {} ticks", path.display(), log.ticks.len());
        }
        let track: Vec<_> = log.ticks.iter().map(|t| t.pose).collect();
        let img = draw::render_track(&log.header.scenario, &track, 20.0);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("episode");
        let out = dir.join(format!("{stem}.png"));
        draw::save_rgb(&img, &out)?;
        let policy = match &log.header.policy {
            PolicyInfo::Classifier { .. } => "classifier",
            PolicyInfo::ScriptedOracle { .. } => "scripted oracle",
        };
        match &log.outcome {
            Some(o) => println!(
                "{}: {} ({policy}), {:?} after {:.1} s -> {}",
                path.display(),
                log.header.scenario.name,
                o.status,
                o.duration,
                out.display()
            ),
            None => println!("{}: {} (truncated) -> {}", path.display(), log.header.scenario.name, out.display()),
        }
        written.push(out);
    }
    Ok(written)
}

pub fn list_scenarios() {
    let mut all = scenarios::all_scenarios();
    all.push(scenarios::training_course());
    for s in all {
        let expected = s.expected_preference.map_or("n/a", preference_name);
        println!(
            "{:40} {:>6.1} m  expected {expected}",
            s.name,
            s.reference_path.length()
        );
    }
}

pub fn export_scenarios(dir: &Path) -> anyhow::Result<()> {
    create_dir(dir)?;
    let mut all = scenarios::all_scenarios();
    all.push(scenarios::training_course());
    for s in &all {
        s.save(dir.join(format!("{}.json", s.name)))?;
    }
    println!("{} scenarios written to {}", all.len(), dir.display());
    Ok(())
}
