use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pfd::engine::{format_float, pfd_run, write_trace_csv, PfdConfig, PfdOutcome, RunFailure};
use pfd::presets::PresetName;
use pfd::verify::{run_all, run_suite, CheckResult, Faults};
use pfd::PfdError;
use thiserror::Error;

use crate::config::{parse_file, ConfigError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Run(RunFailure),
    #[error("{} of {total} verification checks failed: {}", failed.len(), failed.join(", "))]
    Verification { failed: Vec<String>, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Run(_) => EXIT_NUMERICAL,
            CliError::Verification { .. } => EXIT_VERIFICATION,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_trace(dir: &Path, trace: &[pfd::engine::TraceRecord]) -> Result<(), CliError> {
    let path = dir.join("trace.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_trace_csv(trace, io::BufWriter::new(file)).map_err(|e| CliError::Io {
        path: path.clone(),
        source: io::Error::other(e.to_string()),
    })
}

fn row(values: &[f64]) -> String {
    values.iter().map(|x| format_float(*x)).collect::<Vec<_>>().join(",")
}

pub fn result_text(cfg: &PfdConfig, out: &PfdOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "functional = {}", cfg.objective.id());
    let _ = writeln!(s, "outer_steps = {}", cfg.outer_steps);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    if let Some(last) = out.trace.last() {
        let _ = writeln!(s, "j_value = {}", format_float(last.j_value));
        if let Some(tv) = last.tv_to_target {
            let _ = writeln!(s, "tv_to_target = {}", format_float(tv));
        }
    }
    let _ = writeln!(s, "measure = {}", row(out.measure.as_slice()));
    if let Some(policy) = &out.policy {
        for st in 0..policy.states() {
            let _ = writeln!(s, "policy[{st}] = {}", row(&policy.action_probs(st)));
        }
    }
    if let Some(v) = &out.values {
        let _ = writeln!(s, "values = {}", row(v));
    }
    s
}

/// Runs one configuration and writes `trace.csv` and `result.txt` into
/// `out_dir`. A failing run still flushes the records it completed.
pub fn run_one(config: &Path, out_dir: Option<&Path>) -> Result<PathBuf, CliError> {
    let parsed = parse_file(config).map_err(|source| CliError::Config { path: config.to_path_buf(), source })?;
    let cfg = parsed.build().map_err(|source| CliError::Config { path: config.to_path_buf(), source })?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| parsed.file.run.out_dir.clone())
        .ok_or_else(|| CliError::Usage(format!("{}: no output directory (pass --out or set out_dir)", config.display())))?;
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    match pfd_run(&cfg) {
        Ok(out) => {
            write_trace(&dir, &out.trace)?;
            let path = dir.join("result.txt");
            fs::write(&path, result_text(&cfg, &out)).map_err(io_err(&path))?;
            Ok(dir)
        }
        Err(failure) => {
            write_trace(&dir, &failure.trace)?;
            if matches!(failure.error, PfdError::Config(_)) && failure.trace.is_empty() {
                return Err(CliError::Usage(format!("{}: {}", config.display(), failure.error)));
            }
            Err(CliError::Run(failure))
        }
    }
}

/// Runs several configurations on up to `jobs` threads. With more than one
/// config each writes into `out/<config stem>`. Returns the worst exit code.
pub fn cmd_run(configs: &[PathBuf], out: Option<&Path>, jobs: usize) -> i32 {
    if configs.len() > 1 {
        let mut stems: Vec<_> = configs.iter().map(|c| c.file_stem().map(|s| s.to_owned())).collect();
        stems.sort();
        stems.dedup();
        if stems.len() != configs.len() {
            eprintln!("error: config files must have distinct names when running several at once");
            return EXIT_CONFIG;
        }
    }
    let targets: Vec<Option<PathBuf>> = configs
        .iter()
        .map(|c| match (out, configs.len()) {
            (Some(o), 1) => Some(o.to_path_buf()),
            (Some(o), _) => Some(o.join(c.file_stem().unwrap_or_default())),
            (None, _) => None,
        })
        .collect();
    let next = AtomicUsize::new(0);
    let worst = Mutex::new(EXIT_OK);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(config) = configs.get(i) else { break };
                let code = match run_one(config, targets[i].as_deref()) {
                    Ok(dir) => {
                        println!("{}: wrote {}", config.display(), dir.display());
                        EXIT_OK
                    }
                    Err(e) => {
                        eprintln!("error: {}: {e}", config.display());
                        e.exit_code()
                    }
                };
                let mut w = worst.lock().unwrap_or_else(|p| p.into_inner());
                *w = (*w).max(code);
            });
        }
    });
    worst.into_inner().unwrap_or_else(|p| p.into_inner())
}

pub fn verify(suite: Option<&str>, faults: Faults) -> Result<Vec<CheckResult>, CliError> {
    let checks = match suite {
        None | Some("all") => run_all(faults),
        Some(name) => run_suite(name, faults),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{}/{}", c.suite, c.name)).collect();
    println!("{} passed, {} failed", checks.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        return Err(CliError::Verification { failed, total: checks.len() });
    }
    Ok(checks)
}

pub fn list_presets() {
    for p in PresetName::ALL {
        println!("{:<20} {:<4} {}", p.as_str(), p.family(), p.summary());
    }
}
