use std::path::{Path, PathBuf};
use std::process::Command;

/// Result of one criterion: a verdict plus the measured values.
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self::new(false, detail)
    }

    pub fn and(self, other: Outcome) -> Outcome {
        Outcome::new(self.passed && other.passed, format!("{}; {}", self.detail, other.detail))
    }
}

/// Collects named checks into one outcome.
#[derive(Default)]
pub struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failures.push(what.clone());
        }
        self.notes.push(format!("{}{what}", if ok { "" } else { "!" }));
    }

    pub fn outcome(self) -> Outcome {
        Outcome::new(self.failures.is_empty(), self.notes.join(", "))
    }
}

/// Turns an error raised while setting up a criterion into a failure.
pub fn guard(f: impl FnOnce() -> Result<Outcome, String>) -> Outcome {
    f().unwrap_or_else(|e| Outcome::fail(format!("error: {e}")))
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().expect("workspace root")
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// Runs the CLI binary and returns its stdout, or stderr on failure.
pub fn tscan(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tscan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("cannot start tscan: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "tscan {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

pub fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}
