use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ToolError;

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap());
static TOOL_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_-]*$").unwrap());
static PARAM_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z_][A-Za-z0-9_]*$").unwrap());

/// Placeholder that expands to the tool file path.
pub const TOOL_PLACEHOLDER: &str = "tool";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Int,
    Float,
    Flag,
    Path,
}

impl FromStr for ParamType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "string" => ParamType::String,
            "int" => ParamType::Int,
            "float" => ParamType::Float,
            "flag" => ParamType::Flag,
            "path" => ParamType::Path,
            other => return Err(format!("unknown param type {other:?}")),
        })
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamType::String => "string",
            ParamType::Int => "int",
            ParamType::Float => "float",
            ParamType::Flag => "flag",
            ParamType::Path => "path",
        })
    }
}

impl ParamType {
    /// Canonical string form of a JSON argument, or why it doesn't fit.
    pub fn coerce(self, value: &Value) -> Result<String, String> {
        match (self, value) {
            (ParamType::String, Value::String(s)) => Ok(s.clone()),
            (ParamType::String, Value::Number(n)) => Ok(n.to_string()),
            (ParamType::String, Value::Bool(b)) => Ok(b.to_string()),
            (ParamType::Path, Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            (ParamType::Path, _) => Err("expected a non-empty path".into()),
            (ParamType::Int, Value::Number(n)) => n
                .as_i64()
                .map(|i| i.to_string())
                .ok_or_else(|| format!("expected an integer, got {n}")),
            (ParamType::Int, Value::String(s)) => s
                .trim()
                .parse::<i64>()
                .map(|i| i.to_string())
                .map_err(|_| format!("expected an integer, got {s:?}")),
            (ParamType::Float, Value::Number(n)) => Ok(n.to_string()),
            (ParamType::Float, Value::String(s)) => match s.trim().parse::<f64>() {
                Ok(f) if f.is_finite() => Ok(s.trim().to_string()),
                _ => Err(format!("expected a number, got {s:?}")),
            },
            (ParamType::Flag, Value::Bool(b)) => Ok(b.to_string()),
            (ParamType::Flag, Value::String(s)) if s == "true" || s == "false" => Ok(s.clone()),
            (ty, other) => Err(format!("expected {ty}, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub default: Option<String>,
    pub doc: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolManifest {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub entry: String,
    pub version: u32,
}

/// Comment marker for a tool file, chosen by extension.
pub fn comment_marker(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "js" | "ts" | "mjs" | "rs" | "go" | "c" | "cpp" | "java" | "swift" => "//",
        "lua" | "sql" | "hs" => "--",
        _ => "#",
    }
}

/// Placeholder names in a template, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    PLACEHOLDER
        .captures_iter(template)
        .map(|c| c.get(1).unwrap().as_str())
        .collect()
}

fn parse_param(value: &str) -> Result<ParamSpec, String> {
    let mut words = value.split_whitespace();
    let (Some(name), Some(ty), Some(mode)) = (words.next(), words.next(), words.next()) else {
        return Err(format!("param line {value:?} needs <name> <type> <required|optional|default=..>"));
    };
    if !PARAM_NAME.is_match(name) || name == TOOL_PLACEHOLDER {
        return Err(format!("bad param name {name:?}"));
    }
    let ty: ParamType = ty.parse()?;
    let (required, default) = match mode {
        "required" => (true, None),
        "optional" => (false, None),
        m => match m.strip_prefix("default=") {
            Some(d) => {
                ty.coerce(&Value::String(d.to_string()))
                    .map_err(|e| format!("default for {name:?}: {e}"))?;
                (false, Some(d.to_string()))
            }
            None => return Err(format!("param {name:?}: expected required, optional or default=, got {m:?}")),
        },
    };
    Ok(ParamSpec {
        name: name.to_string(),
        ty,
        required,
        default,
        doc: words.collect::<Vec<_>>().join(" "),
    })
}

/// Parses the header block of a tool file. `version` is supplied by the
/// caller, which derives it from archived copies.
pub fn parse_manifest(text: &str, marker: &str, version: u32) -> Result<ToolManifest, ToolError> {
    let err = |m: String| ToolError::ParseError(m);
    let mut name = None;
    let mut description: Vec<String> = Vec::new();
    let mut params: Vec<ParamSpec> = Vec::new();
    let mut entry = None;

    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("#!") {
            continue;
        }
        let Some(body) = line.trim_start().strip_prefix(marker) else {
            break;
        };
        let Some((key, value)) = body.trim().split_once(':') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "name" => {
                if name.replace(value.to_string()).is_some() {
                    return Err(err("name given twice".into()));
                }
            }
            "description" => description.push(value.to_string()),
            "param" => {
                let p = parse_param(value).map_err(err)?;
                if params.iter().any(|q| q.name == p.name) {
                    return Err(err(format!("param {:?} declared twice", p.name)));
                }
                params.push(p);
            }
            "entry" => {
                if entry.replace(value.to_string()).is_some() {
                    return Err(err("entry given twice".into()));
                }
            }
            _ => {}
        }
    }

    let name = name.ok_or_else(|| err("missing `name:` header".into()))?;
    if !TOOL_NAME.is_match(&name) {
        return Err(err(format!("bad tool name {name:?}")));
    }
    let entry = entry.ok_or_else(|| err("missing `entry:` header".into()))?;
    for ph in placeholders(&entry) {
        if ph != TOOL_PLACEHOLDER && !params.iter().any(|p| p.name == ph) {
            return Err(err(format!("entry uses undeclared param {{{ph}}}")));
        }
    }
    Ok(ToolManifest {
        name,
        description: description.join(" "),
        params,
        entry,
        version,
    })
}

impl ToolManifest {
    /// Resolves every param from `args` or its default.
    pub fn bind(&self, args: &Map<String, Value>) -> Result<BTreeMap<String, String>, ToolError> {
        if let Some(unknown) = args.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(ToolError::arg(unknown, "unknown parameter"));
        }
        let mut bound = BTreeMap::new();
        for p in &self.params {
            let value = match (args.get(&p.name), &p.default) {
                (Some(Value::Null) | None, _) if p.required => {
                    return Err(ToolError::arg(&p.name, "required parameter missing"))
                }
                (Some(Value::Null) | None, Some(d)) => p
                    .ty
                    .coerce(&Value::String(d.clone()))
                    .map_err(|e| ToolError::arg(&p.name, e))?,
                (Some(Value::Null) | None, None) => String::new(),
                (Some(v), _) => p.ty.coerce(v).map_err(|e| ToolError::arg(&p.name, e))?,
            };
            bound.insert(p.name.clone(), value);
        }
        Ok(bound)
    }

    /// The shell command for one invocation, each value quoted as one word.
    pub fn render(&self, args: &Map<String, Value>, tool_path: &str) -> Result<String, ToolError> {
        let bound = self.bind(args)?;
        let quote = |param: &str, v: &str| {
            shlex::try_quote(v)
                .map(|q| q.into_owned())
                .map_err(|_| ToolError::arg(param, "contains a NUL byte"))
        };
        let mut out = String::with_capacity(self.entry.len());
        let mut last = 0;
        for cap in PLACEHOLDER.captures_iter(&self.entry) {
            let whole = cap.get(0).unwrap();
            let key = cap.get(1).unwrap().as_str();
            out.push_str(&self.entry[last..whole.start()]);
            if key == TOOL_PLACEHOLDER {
                out.push_str(&quote(key, tool_path)?);
            } else {
                out.push_str(&quote(key, &bound[key])?);
            }
            last = whole.end();
        }
        out.push_str(&self.entry[last..]);
        Ok(out)
    }
}
