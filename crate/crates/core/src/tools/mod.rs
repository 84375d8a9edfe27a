//! Tool library: host-command templates declared by a header comment block.
//!
//! ```text
//! #!/bin/sh
//! # name: zipdir
//! # description: Pack a directory into a tarball.
//! # param: src path required Directory to pack.
//! # param: level int default=6 Compression level.
//! # entry: sh {tool} {src} {level}
//! ```
//!
//! The header ends at the first non-comment line. `{tool}` expands to the
//! tool file's own path; every other placeholder must name a declared param.
//! Each substituted value is shell-quoted so it reaches the command as exactly
//! one token.

mod doc;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use doc::{render_markdown, ParamRow, ToolDoc};
pub use manifest::{
    comment_marker, parse_manifest, placeholders, ParamSpec, ParamType, ToolManifest,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid argument {param:?}: {reason}")]
    ArgValidation { param: String, reason: String },
    #[error("tool file names {found:?}, expected {expected:?}")]
    NameMismatch { expected: String, found: String },
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("tool {0:?} already exists")]
    AlreadyExists(String),
    #[error("io: {0}")]
    Io(String),
}

impl ToolError {
    pub fn arg(param: &str, reason: impl Into<String>) -> Self {
        ToolError::ArgValidation {
            param: param.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for ToolError {
    fn from(e: std::io::Error) -> Self {
        ToolError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiagnosticKind {
    Parse { message: String },
    DuplicateName { name: String, first: String },
    Unreadable { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    #[serde(flatten)]
    pub kind: DiagnosticKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTool {
    pub manifest: ToolManifest,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanResult {
    pub tools: Vec<LoadedTool>,
    pub docs: Vec<ToolDoc>,
    pub diagnostics: Vec<Diagnostic>,
}

fn archive_version(file_name: &str) -> Option<(&str, u32)> {
    let (base, v) = file_name.rsplit_once(".v")?;
    if v.is_empty() || !v.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((base, v.parse().ok()?))
}

fn is_tool_file(name: &str) -> bool {
    !name.starts_with('.') && !name.ends_with(".md") && archive_version(name).is_none()
}

/// Reads every tool file in `dir` (not recursive), in file-name order.
/// Malformed files and duplicate names become diagnostics.
pub fn scan(dir: &Path) -> ScanResult {
    let mut out = ScanResult::default();
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            out.diagnostics.push(Diagnostic {
                file: dir.display().to_string(),
                kind: DiagnosticKind::Unreadable {
                    message: e.to_string(),
                },
            });
            return out;
        }
    };
    let mut names: Vec<String> = Vec::new();
    let mut archives: BTreeMap<String, u32> = BTreeMap::new();
    for entry in entries.flatten() {
        if !entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((base, v)) = archive_version(&name) {
            let max = archives.entry(base.to_string()).or_insert(0);
            *max = (*max).max(v);
        } else if is_tool_file(&name) {
            names.push(name);
        }
    }
    names.sort();

    let mut seen: BTreeMap<String, String> = BTreeMap::new();
    for file in names {
        let path = dir.join(&file);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    file,
                    kind: DiagnosticKind::Unreadable {
                        message: e.to_string(),
                    },
                });
                continue;
            }
        };
        let version = archives.get(&file).map_or(1, |v| v + 1);
        let manifest = match parse_manifest(&text, comment_marker(&path), version) {
            Ok(m) => m,
            Err(e) => {
                out.diagnostics.push(Diagnostic {
                    file,
                    kind: DiagnosticKind::Parse {
                        message: e.to_string(),
                    },
                });
                continue;
            }
        };
        if let Some(first) = seen.get(&manifest.name) {
            out.diagnostics.push(Diagnostic {
                file,
                kind: DiagnosticKind::DuplicateName {
                    name: manifest.name.clone(),
                    first: first.clone(),
                },
            });
            continue;
        }
        seen.insert(manifest.name.clone(), file);
        out.docs.push(ToolDoc::from_manifest(&manifest));
        out.tools.push(LoadedTool { manifest, path });
    }
    out
}

/// Writes `<docs_dir>/<name>.md` for each doc.
pub fn write_docs(docs: &[ToolDoc], docs_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(docs_dir)?;
    docs.iter()
        .map(|d| {
            let path = docs_dir.join(format!("{}.md", d.name));
            fs::write(&path, render_markdown(d))?;
            Ok(path)
        })
        .collect()
}

#[derive(Debug, Default)]
struct Inner {
    tools: BTreeMap<String, LoadedTool>,
    docs: Vec<ToolDoc>,
    diagnostics: Vec<Diagnostic>,
}

/// A scanned tool directory. Readers (invocations) share the lock; `create`
/// and `update` take it exclusively.
#[derive(Debug)]
pub struct ToolLibrary {
    dir: PathBuf,
    docs_dir: Option<PathBuf>,
    inner: RwLock<Inner>,
}

impl ToolLibrary {
    pub fn open(dir: impl Into<PathBuf>) -> Self {
        let lib = ToolLibrary {
            dir: dir.into(),
            docs_dir: None,
            inner: RwLock::default(),
        };
        lib.rescan_locked(&mut lib.inner.write().unwrap_or_else(|p| p.into_inner()));
        lib
    }

    /// Also keep rendered docs in `docs_dir`, regenerated on every change.
    pub fn with_docs_dir(mut self, docs_dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let docs_dir = docs_dir.into();
        write_docs(&self.read().docs, &docs_dir)?;
        self.docs_dir = Some(docs_dir);
        Ok(self)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn rescan_locked(&self, inner: &mut Inner) {
        let scanned = scan(&self.dir);
        inner.tools = scanned
            .tools
            .into_iter()
            .map(|t| (t.manifest.name.clone(), t))
            .collect();
        inner.docs = scanned.docs;
        inner.diagnostics = scanned.diagnostics;
        if let Some(docs_dir) = &self.docs_dir {
            if let Err(e) = write_docs(&inner.docs, docs_dir) {
                log::error!("writing tool docs to {}: {e}", docs_dir.display());
            }
        }
    }

    pub fn rescan(&self) {
        let mut inner = self.inner.write().unwrap_or_else(|p| p.into_inner());
        self.rescan_locked(&mut inner);
    }

    pub fn docs(&self) -> Vec<ToolDoc> {
        self.read().docs.clone()
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.read().diagnostics.clone()
    }

    pub fn manifest(&self, name: &str) -> Option<ToolManifest> {
        self.read().tools.get(name).map(|t| t.manifest.clone())
    }

    pub fn names(&self) -> Vec<String> {
        self.read().tools.keys().cloned().collect()
    }

    /// Validates `args` against the manifest and returns the command line with
    /// every value quoted as a single shell word.
    pub fn render_command(&self, name: &str, args: &Map<String, Value>) -> Result<String, ToolError> {
        let inner = self.read();
        let tool = inner
            .tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        let abs = fs::canonicalize(&tool.path).unwrap_or_else(|_| tool.path.clone());
        tool.manifest.render(args, &abs.to_string_lossy())
    }

    /// Adds a new tool file. The file name must not exist yet.
    pub fn create(&self, file_name: &str, contents: &str) -> Result<ToolManifest, ToolError> {
        if file_name.contains('/') || !is_tool_file(file_name) {
            return Err(ToolError::ParseError(format!("bad tool file name {file_name:?}")));
        }
        let mut inner = self.inner.write().unwrap_or_else(|p| p.into_inner());
        let path = self.dir.join(file_name);
        let manifest = parse_manifest(contents, comment_marker(&path), 1)?;
        if inner.tools.contains_key(&manifest.name) || path.exists() {
            return Err(ToolError::AlreadyExists(manifest.name));
        }
        fs::create_dir_all(&self.dir)?;
        fs::write(&path, contents)?;
        self.rescan_locked(&mut inner);
        Ok(manifest)
    }

    /// Replaces a tool's file, archiving the old one as `<file>.v<old version>`.
    /// Returns the new version.
    pub fn update(&self, name: &str, contents: &str) -> Result<u32, ToolError> {
        let mut inner = self.inner.write().unwrap_or_else(|p| p.into_inner());
        let tool = inner
            .tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?
            .clone();
        let next = tool.manifest.version + 1;
        let manifest = parse_manifest(contents, comment_marker(&tool.path), next)?;
        if manifest.name != name {
            return Err(ToolError::NameMismatch {
                expected: name.to_string(),
                found: manifest.name,
            });
        }
        let mut archive = tool.path.clone().into_os_string();
        archive.push(format!(".v{}", tool.manifest.version));
        let archive = PathBuf::from(archive);
        if archive.exists() {
            return Err(ToolError::Io(format!("{} already exists", archive.display())));
        }
        fs::rename(&tool.path, &archive)?;
        fs::write(&tool.path, contents)?;
        self.rescan_locked(&mut inner);
        Ok(next)
    }
}
