use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Task};
use crate::action::CommandRunner;

/// One environment-reset operation. Paths are relative to the sandbox root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetStep {
    /// Deletes a file or directory tree; absent paths are fine.
    Remove { path: String },
    WriteFile { path: String, content: String },
    Mkdir { path: String },
    /// Runs in the sandbox root; must exit 0.
    Command { command: String },
}

/// Lexical check: relative, and no `..` climbing above the start.
pub fn check_relative(rel: &str) -> Result<PathBuf, String> {
    let mut out = PathBuf::new();
    for c in Path::new(rel).components() {
        match c {
            Component::Normal(p) => out.push(p),
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    return Err(format!("{rel:?} leaves the sandbox"));
                }
            }
            Component::RootDir | Component::Prefix(_) => {
                return Err(format!("{rel:?} is absolute"));
            }
        }
    }
    if out.as_os_str().is_empty() {
        return Err(format!("{rel:?} names the sandbox root itself"));
    }
    Ok(out)
}

/// Resolves `rel` under `root`, refusing anything that ends up outside it,
/// including through symlinks already present in the sandbox.
pub fn confine(root: &Path, rel: &str) -> Result<PathBuf, HarnessError> {
    let escape = || HarnessError::PathEscape(rel.to_string());
    let clean = check_relative(rel).map_err(|_| escape())?;
    let root = fs::canonicalize(root)?;
    let target = root.join(clean);
    // deepest existing ancestor, symlinks resolved
    let mut probe = target.as_path();
    loop {
        match fs::canonicalize(probe) {
            Ok(real) => {
                if !real.starts_with(&root) {
                    return Err(escape());
                }
                break;
            }
            Err(_) => match probe.parent() {
                Some(p) => probe = p,
                None => return Err(escape()),
            },
        }
    }
    Ok(target)
}

fn remove(path: &Path) -> io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

/// Applies the task's reset steps in order and returns the paths touched.
/// Running it twice leaves the same state.
pub fn reset(task: &Task, root: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let runner = CommandRunner::new(root);
    let mut touched = Vec::new();
    for (index, step) in task.reset.iter().enumerate() {
        let failed = |output: String| HarnessError::ResetFailed {
            task: task.id.clone(),
            step: index,
            output,
        };
        match step {
            ResetStep::Remove { path } => {
                let p = confine(root, path)?;
                remove(&p).map_err(|e| failed(e.to_string()))?;
                touched.push(p);
            }
            ResetStep::WriteFile { path, content } => {
                let p = confine(root, path)?;
                if let Some(parent) = p.parent() {
                    fs::create_dir_all(parent).map_err(|e| failed(e.to_string()))?;
                }
                // a symlink at the target would be followed by the write
                confine(root, path)?;
                fs::write(&p, content).map_err(|e| failed(e.to_string()))?;
                touched.push(p);
            }
            ResetStep::Mkdir { path } => {
                let p = confine(root, path)?;
                fs::create_dir_all(&p).map_err(|e| failed(e.to_string()))?;
                touched.push(p);
            }
            ResetStep::Command { command } => {
                let out = runner.run(command).map_err(|e| failed(e.to_string()))?;
                if !out.success() {
                    return Err(failed(out.output));
                }
            }
        }
    }
    Ok(touched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexical_confinement() {
        assert!(check_relative("a/b.txt").is_ok());
        assert_eq!(check_relative("a/../b").unwrap(), PathBuf::from("b"));
        assert!(check_relative("../../etc").is_err());
        assert!(check_relative("a/../../x").is_err());
        assert!(check_relative("/etc/passwd").is_err());
        assert!(check_relative(".").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn symlink_escape_refused() {
        let root = tempfile::tempdir().unwrap();
        let outside = tempfile::tempdir().unwrap();
        std::os::unix::fs::symlink(outside.path(), root.path().join("link")).unwrap();
        assert!(matches!(
            confine(root.path(), "link/x"),
            Err(HarnessError::PathEscape(_))
        ));
        assert!(confine(root.path(), "fresh/dir/x").is_ok());
    }
}
