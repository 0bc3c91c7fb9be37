//! Rebuilds a package version from its declared source repository and
//! compares the rebuilt tarball with the registry artifact.
//!
//! Every external command runs through `sh -c` inside a throwaway sandbox
//! directory with a cleared environment (only `PATH` survives; `HOME` points
//! into the sandbox) and its own process group, so a timeout kills the whole
//! build.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::clone::{canonical_digest, canonical_files};
use crate::package::{load_tarball, Manifest, PackageArtifact};

/// Planning and execution settings. Tool paths and commands are plain
/// configuration; nothing here is derived from the package being tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReproduceConfig {
    pub git: String,
    pub npm: String,
    pub timeout_secs: u64,
    /// Ref templates tried after the built-in ones; `{version}` is substituted.
    pub extra_refs: Vec<String>,
    /// Replaces the default install/build/pack sequence when set.
    pub build_commands: Option<Vec<String>>,
    pub allowed_schemes: Vec<String>,
    /// Parent directory for sandboxes; the system temp dir when unset.
    pub work_root: Option<PathBuf>,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            git: "git".into(),
            npm: "npm".into(),
            timeout_secs: 300,
            extra_refs: Vec::new(),
            build_commands: None,
            allowed_schemes: ["https", "http", "git", "file"].map(String::from).to_vec(),
            work_root: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproducePlan {
    pub repo_url: String,
    pub refs: Vec<String>,
    pub commands: Vec<String>,
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReproduceStatus {
    Reproduced,
    Mismatch,
    NoRepo,
    RefNotFound,
    BuildFailed,
    Timeout,
}

impl ReproduceStatus {
    pub fn name(self) -> &'static str {
        match self {
            ReproduceStatus::Reproduced => "reproduced",
            ReproduceStatus::Mismatch => "mismatch",
            ReproduceStatus::NoRepo => "no_repo",
            ReproduceStatus::RefNotFound => "ref_not_found",
            ReproduceStatus::BuildFailed => "build_failed",
            ReproduceStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiffKind {
    Added,
    Removed,
    Changed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    pub path: String,
    pub kind: DiffKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReproduceResult {
    pub status: ReproduceStatus,
    /// Ref that was checked out, if any resolved.
    pub resolved_ref: Option<String>,
    pub diff: Vec<FileDiff>,
    pub logs: Vec<String>,
}

impl ReproduceResult {
    fn failed(status: ReproduceStatus, resolved_ref: Option<String>, logs: Vec<String>) -> Self {
        Self {
            status,
            resolved_ref,
            diff: Vec::new(),
            logs,
        }
    }
}

/// Turns a `repository` value into a fetchable URL, or `None` when its
/// scheme is not allowed.
pub fn normalize_repo_url(raw: &str, allowed_schemes: &[String]) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    let hosted = |host: &str, path: &str| {
        let path = path.trim_end_matches('/').trim_end_matches(".git");
        format!("https://{host}/{path}.git")
    };
    let url = if let Some(rest) = raw.strip_prefix("git+") {
        rest.to_owned()
    } else if let Some(path) = raw.strip_prefix("github:") {
        hosted("github.com", path)
    } else if let Some(path) = raw.strip_prefix("gitlab:") {
        hosted("gitlab.com", path)
    } else if let Some(path) = raw.strip_prefix("bitbucket:") {
        hosted("bitbucket.org", path)
    } else if let Some((host, path)) = raw.strip_prefix("git@").and_then(|r| r.split_once(':')) {
        hosted(host, path)
    } else if !raw.contains(':') && raw.matches('/').count() == 1 {
        hosted("github.com", raw)
    } else {
        raw.to_owned()
    };
    let (scheme, _) = url.split_once("://")?;
    let scheme = scheme.to_ascii_lowercase();
    allowed_schemes.contains(&scheme).then_some(url)
}

fn default_commands(manifest: &Manifest, npm: &str) -> Vec<String> {
    let mut cmds = vec![format!("{npm} install --ignore-scripts")];
    if let Some(script) = ["prepare", "prepack", "build"].into_iter().find(|s| manifest.script(s).is_some()) {
        cmds.push(format!("{npm} run {script}"));
    }
    cmds.push(format!("{npm} pack"));
    cmds
}

/// Pure function of its inputs. Refs: the recorded commit, `v{version}`,
/// `{version}`, then the configured templates, without duplicates.
pub fn make_plan(manifest: &Manifest, version: &str, config: &ReproduceConfig) -> Option<ReproducePlan> {
    let repo_url = normalize_repo_url(manifest.repository_url.as_deref()?, &config.allowed_schemes)?;
    let mut refs: Vec<String> = Vec::new();
    let candidates = manifest
        .repository_commit
        .iter()
        .map(|s| s.trim().to_owned())
        .chain([format!("v{version}"), version.to_owned()])
        .chain(config.extra_refs.iter().map(|t| t.replace("{version}", version)));
    for r in candidates {
        if !r.is_empty() && !refs.contains(&r) {
            refs.push(r);
        }
    }
    let commands = match &config.build_commands {
        Some(cmds) if !cmds.is_empty() => cmds.clone(),
        _ => default_commands(manifest, &config.npm),
    };
    Some(ReproducePlan {
        repo_url,
        refs,
        commands,
        timeout_secs: config.timeout_secs,
    })
}

/// Symmetric difference of the canonical file sets plus changed paths,
/// sorted by path. Empty iff the canonical digests agree.
pub fn compare_artifacts(a: &PackageArtifact, b: &PackageArtifact) -> Vec<FileDiff> {
    let left: BTreeMap<_, _> = canonical_files(a).into_iter().collect();
    let right: BTreeMap<_, _> = canonical_files(b).into_iter().collect();
    let mut out = Vec::new();
    for (path, content) in &left {
        match right.get(path) {
            None => out.push(FileDiff {
                path: path.to_string(),
                kind: DiffKind::Removed,
            }),
            Some(other) if other != content => out.push(FileDiff {
                path: path.to_string(),
                kind: DiffKind::Changed,
            }),
            Some(_) => {}
        }
    }
    for path in right.keys().filter(|p| !left.contains_key(*p)) {
        out.push(FileDiff {
            path: path.to_string(),
            kind: DiffKind::Added,
        });
    }
    out.sort_by(|x, y| x.path.cmp(&y.path));
    out
}

enum RunOutcome {
    Exited(bool),
    TimedOut,
    SpawnFailed,
}

struct Sandbox {
    root: tempfile::TempDir,
    logs: Vec<String>,
    deadline: Instant,
}

const LOG_TAIL: usize = 4096;

impl Sandbox {
    fn home(&self) -> PathBuf {
        self.root.path().join("home")
    }

    fn run(&mut self, command: &str, cwd: &Path) -> RunOutcome {
        self.logs.push(format!("$ {command}"));
        let out_path = self.root.path().join("last-output.log");
        let Ok(out) = fs::File::create(&out_path) else {
            return RunOutcome::SpawnFailed;
        };
        let Ok(err) = out.try_clone() else {
            return RunOutcome::SpawnFailed;
        };
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(command)
            .current_dir(cwd)
            .env_clear()
            .env("HOME", self.home())
            .env("GIT_TERMINAL_PROMPT", "0")
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env("npm_config_cache", self.root.path().join("npm-cache"))
            .stdin(Stdio::null())
            .stdout(out)
            .stderr(err);
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => {
                self.logs.push(format!("spawn failed: {e}"));
                return RunOutcome::SpawnFailed;
            }
        };
        let outcome = loop {
            match child.try_wait() {
                Ok(Some(status)) => {
                    self.logs.push(format!("exit: {status}"));
                    break RunOutcome::Exited(status.success());
                }
                Ok(None) if Instant::now() >= self.deadline => {
                    kill_group(child.id());
                    let _ = child.kill();
                    let _ = child.wait();
                    self.logs.push("killed: timeout".into());
                    break RunOutcome::TimedOut;
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => {
                    self.logs.push(format!("wait failed: {e}"));
                    break RunOutcome::SpawnFailed;
                }
            }
        };
        if let Ok(text) = fs::read(&out_path) {
            let start = text.len().saturating_sub(LOG_TAIL);
            let text = String::from_utf8_lossy(&text[start..]);
            if !text.trim().is_empty() {
                self.logs.push(text.trim_end().to_owned());
            }
        }
        outcome
    }
}

fn kill_group(pid: u32) {
    #[cfg(unix)]
    {
        let _ = Command::new("kill")
            .arg("-KILL")
            .arg("--")
            .arg(format!("-{pid}"))
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status();
    }
    #[cfg(not(unix))]
    let _ = pid;
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Never panics or returns an error; every failure is a status.
pub fn reproduce(plan: &ReproducePlan, original: &PackageArtifact, config: &ReproduceConfig) -> ReproduceResult {
    let root = match &config.work_root {
        Some(dir) => fs::create_dir_all(dir).and_then(|_| tempfile::Builder::new().prefix("repro-").tempdir_in(dir)),
        None => tempfile::Builder::new().prefix("repro-").tempdir(),
    };
    let root = match root {
        Ok(r) => r,
        Err(e) => return ReproduceResult::failed(ReproduceStatus::BuildFailed, None, vec![format!("sandbox: {e}")]),
    };
    let mut sb = Sandbox {
        root,
        logs: Vec::new(),
        deadline: Instant::now() + Duration::from_secs(plan.timeout_secs),
    };
    let _ = fs::create_dir_all(sb.home());
    let checkout = sb.root.path().join("src");
    let git = &config.git;

    let clone = format!(
        "{git} clone --quiet {} {}",
        shell_quote(&plan.repo_url),
        shell_quote(&checkout.to_string_lossy())
    );
    let sandbox_root = sb.root.path().to_path_buf();
    match sb.run(&clone, &sandbox_root) {
        RunOutcome::Exited(true) => {}
        RunOutcome::TimedOut => return ReproduceResult::failed(ReproduceStatus::Timeout, None, sb.logs),
        _ => return ReproduceResult::failed(ReproduceStatus::NoRepo, None, sb.logs),
    }

    let mut resolved = None;
    'refs: for r in &plan.refs {
        for candidate in [r.clone(), format!("origin/{r}")] {
            let cmd = format!(
                "{git} rev-parse --verify --quiet {} && {git} checkout --quiet --detach {}",
                shell_quote(&format!("{candidate}^{{commit}}")),
                shell_quote(&candidate)
            );
            match sb.run(&cmd, &checkout) {
                RunOutcome::Exited(true) => {
                    resolved = Some(r.clone());
                    break 'refs;
                }
                RunOutcome::TimedOut => return ReproduceResult::failed(ReproduceStatus::Timeout, None, sb.logs),
                _ => {}
            }
        }
    }
    let Some(resolved) = resolved else {
        return ReproduceResult::failed(ReproduceStatus::RefNotFound, None, sb.logs);
    };

    for command in &plan.commands {
        match sb.run(command, &checkout) {
            RunOutcome::Exited(true) => {}
            RunOutcome::TimedOut => return ReproduceResult::failed(ReproduceStatus::Timeout, Some(resolved), sb.logs),
            _ => return ReproduceResult::failed(ReproduceStatus::BuildFailed, Some(resolved), sb.logs),
        }
    }

    let packed = fs::read_dir(&checkout).ok().and_then(|dir| {
        let mut tgz: Vec<PathBuf> = dir
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "tgz"))
            .collect();
        tgz.sort();
        tgz.into_iter().next()
    });
    let Some(packed) = packed else {
        sb.logs.push("no packed tarball in checkout root".into());
        return ReproduceResult::failed(ReproduceStatus::BuildFailed, Some(resolved), sb.logs);
    };
    let rebuilt = match fs::read(&packed).map_err(|e| e.to_string()).and_then(|b| load_tarball(&b).map_err(|e| e.to_string())) {
        Ok(a) => a,
        Err(e) => {
            sb.logs.push(format!("{}: {e}", packed.display()));
            return ReproduceResult::failed(ReproduceStatus::BuildFailed, Some(resolved), sb.logs);
        }
    };

    let (theirs, ours) = (canonical_digest(original), canonical_digest(&rebuilt));
    sb.logs.push(format!("registry {theirs} rebuilt {ours}"));
    let status = if theirs == ours {
        ReproduceStatus::Reproduced
    } else {
        ReproduceStatus::Mismatch
    };
    ReproduceResult {
        status,
        resolved_ref: Some(resolved),
        diff: compare_artifacts(original, &rebuilt),
        logs: sb.logs,
    }
}
