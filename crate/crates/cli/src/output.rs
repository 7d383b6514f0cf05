//! Run directories: data tables, `rho.json` and `meta.json`, plus the
//! round-trip check behind `kerrcrit validate`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::json;

use kerrcrit::sweep::SweepResult;
use kerrcrit::DensityMatrix;

use crate::commands::Output;
use crate::config::{Format, RunConfig};
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn file_name(suffix: &Option<String>, format: Format) -> String {
    let ext = match format {
        Format::Tsv => "tsv",
        Format::Json => "json",
    };
    match suffix {
        Some(s) => format!("data-{s}.{ext}"),
        None => format!("data.{ext}"),
    }
}

/// Writes every table with the config echo in its metadata, then `meta.json`.
/// Data files carry no timestamp so that reruns are byte-identical.
pub fn write_run(cfg: &RunConfig, out: &mut Output) -> Result<Vec<PathBuf>, CliError> {
    let dir = PathBuf::from(&cfg.out);
    fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    let echo = serde_json::to_value(&cfg.command).map_err(|e| CliError::Io(e.to_string()))?;
    let mut written = Vec::new();
    for (suffix, table) in out.tables.iter_mut() {
        table.metadata.insert("command".into(), json!(cfg.command.name()));
        table.metadata.insert("version".into(), json!(VERSION));
        table.metadata.insert("config".into(), echo.clone());
        table.metadata.insert("n_axes".into(), json!(table.axes.len()));
        let path = dir.join(file_name(suffix, cfg.format));
        let text = match cfg.format {
            Format::Tsv => table.to_tsv(),
            Format::Json => table.to_json(),
        };
        fs::write(&path, text).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    if let Some(rho) = &out.rho {
        let path = dir.join("rho.json");
        fs::write(&path, rho.to_json()).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let files: Vec<String> = written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
    let meta = json!({
        "command": cfg.command.name(),
        "version": VERSION,
        "created_unix": stamp,
        "config": cfg,
        "files": files,
        "failed_points": out.failures,
    });
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn n_axes(text: &str) -> usize {
    text.lines()
        .filter_map(|l| l.strip_prefix("# n_axes: "))
        .find_map(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

/// Re-reads one output file and checks that re-serializing it reproduces the bytes.
pub fn validate_file(path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let fail = |what: String| CliError::Numerical(format!("{}: {what}", path.display()));
    let again = if name == "rho.json" {
        DensityMatrix::from_json(&text).map_err(|e| fail(e.to_string()))?.to_json()
    } else if name == "meta.json" {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        serde_json::to_string_pretty(&v).expect("meta serializes")
    } else if name.ends_with(".tsv") {
        SweepResult::from_tsv(&text, n_axes(&text)).map_err(|e| fail(e.to_string()))?.to_tsv()
    } else if name.ends_with(".json") {
        SweepResult::from_json(&text).map_err(|e| fail(e.to_string()))?.to_json()
    } else {
        return Ok(());
    };
    if again != text {
        return Err(fail("re-serialized content differs".into()));
    }
    Ok(())
}

/// Validates every file of a run directory, returning the names checked.
pub fn validate_dir(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv" || x == "json"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Io(format!("{}: no output files", dir.display())));
    }
    let mut checked = Vec::new();
    for p in names {
        validate_file(&p)?;
        checked.push(p.display().to_string());
    }
    Ok(checked)
}
