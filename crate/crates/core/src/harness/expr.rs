use std::fs;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use super::reset::{check_relative, confine};
use super::HarnessError;
use crate::action::CommandRunner;
use crate::recorder::{CheckResult, Verdict};

/// Declarative outcome check. Serialised as
/// `{"node": "...", "children": [...], "path": "...", "pattern": "...", "command": "..."}`
/// with only the fields the node needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExpr", into = "RawExpr")]
pub enum EvalExpr {
    All(Vec<EvalExpr>),
    Any(Vec<EvalExpr>),
    Not(Box<EvalExpr>),
    FileExists { path: String },
    FileMatches { path: String, pattern: String },
    /// True when the command exits 0 and its output matches.
    CommandOutputMatches { command: String, pattern: String },
    PathAbsent { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Node {
    All,
    Any,
    Not,
    FileExists,
    FileMatches,
    CommandOutputMatches,
    PathAbsent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpr {
    node: Node,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<RawExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    command: Option<String>,
}

pub(crate) fn build_regex(pattern: &str) -> Result<Regex, regex::Error> {
    RegexBuilder::new(pattern).multi_line(true).build()
}

impl RawExpr {
    fn convert(self, at: &str) -> Result<EvalExpr, String> {
        let fail = |msg: String| Err(format!("{at}: {msg}"));
        let name = serde_json::to_value(self.node).unwrap();
        let name = name.as_str().unwrap();
        let combinator = matches!(self.node, Node::All | Node::Any | Node::Not);
        if !combinator && !self.children.is_empty() {
            return fail(format!("`{name}` is a leaf and takes no children"));
        }
        let allowed: &[&str] = match self.node {
            Node::All | Node::Any | Node::Not => &[],
            Node::FileExists | Node::PathAbsent => &["path"],
            Node::FileMatches => &["path", "pattern"],
            Node::CommandOutputMatches => &["command", "pattern"],
        };
        for (field, present) in [
            ("path", self.path.is_some()),
            ("pattern", self.pattern.is_some()),
            ("command", self.command.is_some()),
        ] {
            if present && !allowed.contains(&field) {
                return fail(format!("`{name}` does not take `{field}`"));
            }
            if !present && allowed.contains(&field) {
                return fail(format!("`{name}` requires `{field}`"));
            }
        }
        if let Some(p) = &self.path {
            if let Err(e) = check_relative(p) {
                return fail(format!("path: {e}"));
            }
        }
        if let Some(p) = &self.pattern {
            if let Err(e) = build_regex(p) {
                return fail(format!("pattern: {e}"));
            }
        }
        let children = |cs: Vec<RawExpr>| -> Result<Vec<EvalExpr>, String> {
            cs.into_iter()
                .enumerate()
                .map(|(i, c)| c.convert(&format!("{at}.children[{i}]")))
                .collect()
        };
        Ok(match self.node {
            Node::All | Node::Any if self.children.is_empty() => {
                return fail(format!("`{name}` needs at least one child"))
            }
            Node::All => EvalExpr::All(children(self.children)?),
            Node::Any => EvalExpr::Any(children(self.children)?),
            Node::Not if self.children.len() != 1 => {
                return fail(format!("`not` needs exactly one child, got {}", self.children.len()))
            }
            Node::Not => EvalExpr::Not(Box::new(children(self.children)?.remove(0))),
            Node::FileExists => EvalExpr::FileExists { path: self.path.unwrap() },
            Node::PathAbsent => EvalExpr::PathAbsent { path: self.path.unwrap() },
            Node::FileMatches => EvalExpr::FileMatches {
                path: self.path.unwrap(),
                pattern: self.pattern.unwrap(),
            },
            Node::CommandOutputMatches => EvalExpr::CommandOutputMatches {
                command: self.command.unwrap(),
                pattern: self.pattern.unwrap(),
            },
        })
    }
}

impl TryFrom<RawExpr> for EvalExpr {
    type Error = String;

    fn try_from(raw: RawExpr) -> Result<Self, String> {
        raw.convert("expr")
    }
}

impl From<EvalExpr> for RawExpr {
    fn from(e: EvalExpr) -> Self {
        let mut raw = RawExpr {
            node: Node::All,
            children: Vec::new(),
            path: None,
            pattern: None,
            command: None,
        };
        match e {
            EvalExpr::All(c) => raw.children = c.into_iter().map(Into::into).collect(),
            EvalExpr::Any(c) => {
                raw.node = Node::Any;
                raw.children = c.into_iter().map(Into::into).collect();
            }
            EvalExpr::Not(c) => {
                raw.node = Node::Not;
                raw.children = vec![(*c).into()];
            }
            EvalExpr::FileExists { path } => {
                raw.node = Node::FileExists;
                raw.path = Some(path);
            }
            EvalExpr::PathAbsent { path } => {
                raw.node = Node::PathAbsent;
                raw.path = Some(path);
            }
            EvalExpr::FileMatches { path, pattern } => {
                raw.node = Node::FileMatches;
                raw.path = Some(path);
                raw.pattern = Some(pattern);
            }
            EvalExpr::CommandOutputMatches { command, pattern } => {
                raw.node = Node::CommandOutputMatches;
                raw.command = Some(command);
                raw.pattern = Some(pattern);
            }
        }
        raw
    }
}

impl EvalExpr {
    pub fn is_leaf(&self) -> bool {
        !matches!(self, EvalExpr::All(_) | EvalExpr::Any(_) | EvalExpr::Not(_))
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            EvalExpr::All(c) | EvalExpr::Any(c) => c.iter().map(EvalExpr::leaf_count).sum(),
            EvalExpr::Not(c) => c.leaf_count(),
            _ => 1,
        }
    }

    /// Short form used in feedback, e.g. `file_exists(report.txt)`.
    pub fn describe(&self) -> String {
        match self {
            EvalExpr::All(c) | EvalExpr::Any(c) => {
                let name = if matches!(self, EvalExpr::All(_)) { "all" } else { "any" };
                let inner: Vec<String> = c.iter().map(EvalExpr::describe).collect();
                format!("{name}[{}]", inner.join(", "))
            }
            EvalExpr::Not(c) => format!("not {}", c.describe()),
            EvalExpr::FileExists { path } => format!("file_exists({path})"),
            EvalExpr::PathAbsent { path } => format!("path_absent({path})"),
            EvalExpr::FileMatches { path, pattern } => format!("file_matches({path}, /{pattern}/)"),
            EvalExpr::CommandOutputMatches { command, pattern } => {
                format!("command_output_matches({command}, /{pattern}/)")
            }
        }
    }

    /// Paths the expression reads, for confinement checks.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            EvalExpr::All(c) | EvalExpr::Any(c) => c.iter().flat_map(EvalExpr::paths).collect(),
            EvalExpr::Not(c) => c.paths(),
            EvalExpr::FileExists { path }
            | EvalExpr::PathAbsent { path }
            | EvalExpr::FileMatches { path, .. } => vec![path],
            EvalExpr::CommandOutputMatches { .. } => Vec::new(),
        }
    }
}

fn walk<F>(
    expr: &EvalExpr,
    negated: bool,
    leaf: &mut F,
    checks: &mut Vec<CheckResult>,
) -> Result<bool, HarnessError>
where
    F: FnMut(&EvalExpr) -> Result<bool, HarnessError>,
{
    // `&` and `|` rather than `&&`/`||`: every leaf is evaluated and reported
    Ok(match expr {
        EvalExpr::All(cs) => {
            let mut v = true;
            for c in cs {
                v &= walk(c, negated, leaf, checks)?;
            }
            v
        }
        EvalExpr::Any(cs) => {
            let mut v = false;
            for c in cs {
                v |= walk(c, negated, leaf, checks)?;
            }
            v
        }
        EvalExpr::Not(c) => !walk(c, !negated, leaf, checks)?,
        _ => {
            let value = leaf(expr)?;
            let description = if negated {
                format!("not {}", expr.describe())
            } else {
                expr.describe()
            };
            // a leaf under an odd number of `not`s passes when it is false
            checks.push(CheckResult {
                description,
                passed: value != negated,
            });
            value
        }
    })
}

/// Evaluates with a caller-supplied leaf oracle. Every leaf is visited once,
/// in document order.
pub fn evaluate_with<F>(expr: &EvalExpr, mut leaf: F) -> Result<Verdict, HarnessError>
where
    F: FnMut(&EvalExpr) -> Result<bool, HarnessError>,
{
    let mut checks = Vec::new();
    let success = walk(expr, false, &mut leaf, &mut checks)?;
    Ok(Verdict {
        success,
        feedback: feedback(success, &checks),
        checks,
    })
}

pub fn feedback(success: bool, checks: &[CheckResult]) -> String {
    let failed: Vec<String> = checks
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.passed)
        .map(|(i, c)| format!("check #{} `{}` failed", i + 1, c.description))
        .collect();
    let n = checks.len();
    match (failed.len(), success) {
        (0, _) => format!("all {n} checks passed"),
        (k, true) => format!("passed with {k} of {n} checks failing: {}", failed.join("; ")),
        (k, false) => format!("{k} of {n} checks failed: {}", failed.join("; ")),
    }
}

/// Evaluates leaves against files under `root`; commands run there too.
pub fn evaluate_in(
    expr: &EvalExpr,
    root: &Path,
    runner: &CommandRunner,
) -> Result<Verdict, HarnessError> {
    evaluate_with(expr, |leaf| eval_leaf(leaf, root, runner))
}

fn eval_leaf(leaf: &EvalExpr, root: &Path, runner: &CommandRunner) -> Result<bool, HarnessError> {
    let regex = |p: &str| build_regex(p).map_err(|e| HarnessError::EvalError(e.to_string()));
    Ok(match leaf {
        EvalExpr::FileExists { path } => confine(root, path)?.is_file(),
        EvalExpr::PathAbsent { path } => fs::symlink_metadata(confine(root, path)?).is_err(),
        EvalExpr::FileMatches { path, pattern } => match fs::read(confine(root, path)?) {
            Ok(bytes) => regex(pattern)?.is_match(&String::from_utf8_lossy(&bytes)),
            Err(_) => false,
        },
        EvalExpr::CommandOutputMatches { command, pattern } => {
            let out = runner
                .run(command)
                .map_err(|e| HarnessError::EvalError(format!("{command}: {e}")))?;
            if out.timed_out {
                return Err(HarnessError::EvalError(format!("{command}: timed out")));
            }
            match out.exit_code {
                None => {
                    return Err(HarnessError::EvalError(format!("{command}: killed by signal")))
                }
                Some(0) => regex(pattern)?.is_match(&out.output),
                Some(_) => false,
            }
        }
        _ => unreachable!("combinators are handled by walk"),
    })
}
