use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;

use unroll_core::backend_adapter::{health_check, EndpointSpec};
use unroll_core::evalharness::{run_ablation_with, MetricReport, SuiteSpec, TaskSuite};
use unroll_core::policy::Engine;
use unroll_core::workspace::{hash_state, replay as replay_trace, ContentHash, Trace};

use crate::config::RunConfig;
use crate::transcript::{answer_summary, render};
use crate::{CliError, HealthArgs, RunArgs, SuiteArgs};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn suite(a: SuiteArgs) -> Result<(), CliError> {
    let size = a.size.unwrap_or_else(|| a.kind.default_size());
    if size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let spec = SuiteSpec {
        name: a.name.unwrap_or_else(|| a.kind.as_str().to_string()),
        kind: a.kind,
        seed: a.seed,
        size,
        difficulty: a.difficulty,
    };
    let suite = spec.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&a.out, suite.to_json())?;
    println!("suite {} ({}) seed {}: {} tasks -> {}", suite.name, suite.kind.as_str(), suite.seed, suite.len(), a.out.display());
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    let mut atoms: BTreeMap<usize, usize> = BTreeMap::new();
    let mut tags: BTreeMap<&str, usize> = BTreeMap::new();
    for t in &suite.tasks {
        *kinds.entry(t.spec.kind.as_str()).or_default() += 1;
        *atoms.entry(t.atom_count.unwrap_or(0)).or_default() += 1;
        *tags.entry(t.tag.as_str()).or_default() += 1;
    }
    for (k, n) in &kinds {
        println!("kind {k}: {n}");
    }
    for (tag, n) in &tags {
        println!("tag {tag}: {n}");
    }
    for (k, n) in &atoms {
        match k {
            0 => println!("atoms none: {n}"),
            k => println!("atoms {k}: {n}"),
        }
    }
    Ok(())
}

struct Prepared {
    cfg: RunConfig,
    suite: TaskSuite,
    engine: Engine,
}

/// Loads the config, applies flag overrides and validates before any work.
fn prepare(a: RunArgs) -> Result<Prepared, CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if !a.pipelines.is_empty() {
        cfg.pipelines = a.pipelines;
    }
    if let Some(b) = a.budget {
        cfg.policy.budget = b;
    }
    if let Some(s) = a.seed {
        cfg.policy.rng_seed = s;
    }
    if let Some(p) = a.on_budget_exceeded {
        cfg.policy.on_budget_exceeded = p;
    }
    cfg.noise.extend(a.noise);
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    let mut suite = match (&a.suite, &cfg.suite) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            TaskSuite::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        (None, Some(spec)) => spec.build().map_err(|e| CliError::Runtime(e.to_string()))?,
        (None, None) => return Err(CliError::Usage("give --suite or a config with a suite spec".into())),
    };
    if let Some(n) = a.limit {
        if n == 0 {
            return Err(CliError::Usage("--limit must be positive".into()));
        }
        suite = suite.truncated(n);
    }
    cfg.resolve_pipelines()?;
    let engine = cfg.engine()?;
    Ok(Prepared { cfg, suite, engine })
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    let Prepared { cfg, suite, engine } = prepare(a)?;
    let pipelines = cfg.resolve_pipelines()?;
    for p in &pipelines {
        p.validate(&engine.registry).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let out = cfg.output_dir.clone();
    write_file(&out.join("run_config.json"), cfg.to_json())?;
    println!("{:<22} {:>6} {:>8} {:>10}  digest", "pipeline", "tasks", "skipped", "mean_cost");
    for p in &pipelines {
        let runs: Vec<_> = suite
            .tasks
            .par_iter()
            .map(|t| engine.run_unroll(&t.input(), &t.scene, p, &cfg.policy))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let dir = out.join("traces").join(file_stem(&p.name));
        let mut answers = String::new();
        let mut digest = Vec::new();
        let (mut skipped, mut cost) = (0usize, 0u64);
        for run in &runs {
            let id = &run.trace.header.task_id;
            write_file(&dir.join(format!("{}.trace", file_stem(id))), run.trace.to_bytes())?;
            answers.push_str(&run.trace.answer_json);
            answers.push('\n');
            digest.extend_from_slice(&run.trace.final_hash().0);
            skipped += run.skipped_steps();
            cost += run.workspace.spent();
        }
        write_file(&out.join("answers").join(format!("{}.jsonl", file_stem(&p.name))), answers)?;
        println!(
            "{:<22} {:>6} {:>8} {:>10.2}  {}",
            p.name,
            runs.len(),
            skipped,
            cost as f64 / runs.len().max(1) as f64,
            ContentHash::of(&digest).short()
        );
    }
    println!("wrote {} traces under {}", suite.len() * pipelines.len(), out.join("traces").display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn print_table(r: &MetricReport) {
    println!(
        "{:<22} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10}",
        "pipeline", "tasks", "accuracy", "gm", "abs_rel", "delta1", "rot_deg", "trans", "mean_cost"
    );
    for row in &r.rows {
        println!(
            "{:<22} {:>6} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>10.2}",
            row.pipeline,
            row.tasks,
            opt(row.accuracy),
            opt(row.soft_tifa_gm),
            opt(row.abs_rel),
            opt(row.delta1),
            opt(row.rot_err_deg),
            opt(row.trans_err),
            row.mean_cost
        );
    }
    let curves: Vec<_> = r.rows.iter().filter(|row| !row.atomicity.is_empty()).collect();
    if !curves.is_empty() {
        println!("atomicity (all atoms satisfied) by k");
        for row in curves {
            let vals: Vec<String> = row.atomicity.iter().map(|(k, v)| format!("{k}:{v:.2}")).collect();
            println!("{:<22} {}", row.pipeline, vals.join(" "));
        }
    }
}

pub fn ablate(a: RunArgs) -> Result<(), CliError> {
    let Prepared { cfg, suite, engine } = prepare(a)?;
    let pipelines = cfg.resolve_pipelines()?;
    let mut report = run_ablation_with(&engine, &suite, &pipelines, &cfg.ablation())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    report.meta.config_hash = cfg.hash();
    report.meta.config = serde_json::to_value(&cfg).expect("config serializes");
    let out = &cfg.output_dir;
    write_file(&out.join("run_config.json"), cfg.to_json())?;
    if cfg.formats.csv {
        write_file(&out.join("report.csv"), report.to_csv())?;
    }
    if cfg.formats.json {
        write_file(&out.join("report.json"), report.to_json())?;
    }
    if cfg.formats.plot {
        let plot = serde_json::to_string_pretty(&report.plot_data()).expect("plot data serializes");
        write_file(&out.join("plot_data.json"), plot)?;
    }
    print_table(&report);
    println!("report written to {}", out.display());
    Ok(())
}

fn load_trace(path: &Path) -> Result<Trace, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let trace = Trace::from_bytes(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    replay_trace(&trace).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(trace)
}

pub fn trace(path: &Path) -> Result<(), CliError> {
    let t = load_trace(path)?;
    print!("{}", render(&t));
    Ok(())
}

pub fn replay(path: &Path, reexecute: bool, config: Option<PathBuf>) -> Result<(), CliError> {
    let t = load_trace(path)?;
    let ws = replay_trace(&t).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "replayed {} steps, {} items, {} tokens, final hash {}",
        t.records.len(),
        ws.len(),
        ws.spent(),
        hash_state(&ws).to_hex()
    );
    if reexecute {
        let engine = RunConfig::load(config.as_deref())?.engine()?;
        let run = engine
            .reexecute(&t)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        println!("re-executed: answer {} matches", answer_summary(&run.answer.payload));
    }
    Ok(())
}

pub fn health(a: HealthArgs) -> Result<(), CliError> {
    let mut endpoints: Vec<EndpointSpec> = Vec::new();
    if let Some(url) = &a.url {
        endpoints.push(EndpointSpec::new(url, Duration::from_millis(a.timeout_ms)));
    }
    if a.config.is_some() {
        let cfg = RunConfig::load(a.config.as_deref())?;
        endpoints.extend(cfg.remote.into_iter().map(|r| r.endpoint));
    }
    if endpoints.is_empty() {
        return Err(CliError::Usage("give --url or a config with remote endpoints".into()));
    }
    let mut all_ok = true;
    for ep in &endpoints {
        let h = health_check(ep);
        all_ok &= h.healthy;
        let state = if h.healthy { "healthy" } else { "unhealthy" };
        println!("{} {state} {}ms {}", ep.base_url, h.latency_ms, h.detail);
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Runtime("some endpoints are unhealthy".into()))
    }
}
