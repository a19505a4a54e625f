//! Output plumbing shared by the subcommands: CSV and SVG writers, the run
//! manifest and error classification.

use std::io::Write;
use std::path::{Path, PathBuf};

use atomchip_core::scene::{ResolvedScene, SceneError, ScenePresets};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Scene(#[from] SceneError),
    #[error("{0}")]
    Physics(#[from] atomchip_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Scene(_) => 3,
            CliError::Physics(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Self-contained record of one invocation: the filled scene, every
/// parameter and the seed suffice to replay it.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub scene_name: Option<String>,
    /// `sha256:` of the filled scene text.
    pub scene_hash: Option<String>,
    pub scene: Option<String>,
    pub parameters: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started_utc: String,
    pub finished_utc: String,
    pub outputs: Vec<String>,
}

pub fn scene_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

/// A CSV cell: finite floats in shortest round-trip form (exponent notation
/// outside 1e-4..1e15), `None` and non-finite values empty.
pub fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x == 0.0 || (1e-4..1e15).contains(&x.abs()) => format!("{x}"),
        Some(x) if x.is_finite() => format!("{x:e}"),
        _ => String::new(),
    }
}

pub fn num(v: f64) -> String {
    cell(Some(v))
}

pub struct Run {
    command: String,
    parameters: serde_json::Value,
    scene: Option<(Option<String>, String)>,
    seed: Option<u64>,
    started: String,
    /// Primary CSV destination; stdout when `None`.
    out: Option<PathBuf>,
    manifest: Option<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(command: &str, parameters: &impl Serialize, out: Option<&Path>, plot: Option<&Path>) -> Self {
        let manifest = out.or(plot).map(|p| {
            let mut s = p.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        });
        Run {
            command: command.into(),
            parameters: serde_json::to_value(parameters).unwrap_or(serde_json::Value::Null),
            scene: None,
            seed: None,
            started: now(),
            out: out.map(Path::to_path_buf),
            manifest,
            outputs: Vec::new(),
        }
    }

    pub fn load_scene(&mut self, name_or_path: &str) -> CliResult<ResolvedScene> {
        let file = ScenePresets::default().load(name_or_path)?;
        let resolved = file.resolve()?;
        self.scene = Some((resolved.file.name.clone(), resolved.file.to_toml()));
        Ok(resolved)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    fn manifest_line(&self) -> String {
        let name = self
            .manifest
            .as_ref()
            .and_then(|m| m.file_name())
            .map_or_else(|| "none (stdout)".to_string(), |n| n.to_string_lossy().into_owned());
        format!("# manifest: {name}\n")
    }

    /// Writes the primary CSV (to `--out` or stdout).
    pub fn csv(&mut self, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let out = self.out.clone();
        match out {
            Some(p) => self.csv_to(&p, header, rows),
            None => {
                let text = self.csv_text(header, rows)?;
                std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::Io(format!("stdout: {e}")))
            }
        }
    }

    fn csv_text(&self, header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(self.manifest_line() + &String::from_utf8_lossy(&body))
    }

    /// Writes a secondary CSV file.
    pub fn csv_to(&mut self, path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        if self.manifest.is_none() {
            let mut s = path.as_os_str().to_owned();
            s.push(".manifest.json");
            self.manifest = Some(PathBuf::from(s));
        }
        let text = self.csv_text(header, rows)?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    pub fn svg(&mut self, path: &Path, svg: &str) -> CliResult<()> {
        let (first, rest) = svg.split_once('\n').unwrap_or((svg, ""));
        let line = self.manifest_line();
        let comment = format!("<!-- {} -->", line.trim_start_matches("# ").trim_end());
        let text = format!("{first}\n{comment}\n{rest}");
        std::fs::write(path, text).map_err(|e| io_err(path, e))?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    /// Human-readable summary: stdout when the CSV went to a file, stderr
    /// otherwise so that piped CSV stays clean.
    pub fn summary(&self, text: &str) {
        if self.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
    }

    pub fn finish(self, threads: usize) -> CliResult<()> {
        let Some(path) = self.manifest else {
            return Ok(());
        };
        let (scene_name, scene) = match self.scene {
            Some((n, t)) => (n, Some(t)),
            None => (None, None),
        };
        let m = RunManifest {
            tool: "atomchip",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            argv: std::env::args().collect(),
            scene_name,
            scene_hash: scene.as_deref().map(scene_hash),
            scene,
            parameters: self.parameters,
            seed: self.seed,
            threads,
            started_utc: self.started,
            finished_utc: now(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells() {
        assert_eq!(cell(Some(0.1)), "0.1");
        assert_eq!(cell(Some(f64::NAN)), "");
        assert_eq!(cell(None), "");
        assert_eq!(num(-2.5e-7), "-2.5e-7");
        assert_eq!(num(6.02e23), "6.02e23");
        assert_eq!(num(-0.0), "-0");
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            scene_hash(""),
            "sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
