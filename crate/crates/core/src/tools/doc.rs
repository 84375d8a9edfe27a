use std::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::manifest::{ParamType, ToolManifest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
    pub default: Option<String>,
    pub doc: String,
}

/// Documentation derived from a manifest; never edited by hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDoc {
    pub name: String,
    pub version: u32,
    pub synopsis: String,
    pub params: Vec<ParamRow>,
    /// An `invoke_tool` action filling in the required params.
    pub usage: String,
}

fn sample(ty: ParamType, name: &str) -> Value {
    match ty {
        ParamType::Int => json!(1),
        ParamType::Float => json!(1.0),
        ParamType::Flag => json!(true),
        ParamType::String | ParamType::Path => json!(format!("<{name}>")),
    }
}

impl ToolDoc {
    pub fn from_manifest(m: &ToolManifest) -> Self {
        let synopsis = if m.description.is_empty() {
            m.name.clone()
        } else {
            format!("{}: {}", m.name, m.description)
        };
        let args: Map<String, Value> = m
            .params
            .iter()
            .filter(|p| p.required)
            .map(|p| (p.name.clone(), sample(p.ty, &p.name)))
            .collect();
        let usage = json!({"kind": "invoke_tool", "tool": {"name": m.name, "args": args}});
        ToolDoc {
            name: m.name.clone(),
            version: m.version,
            synopsis,
            params: m
                .params
                .iter()
                .map(|p| ParamRow {
                    name: p.name.clone(),
                    ty: p.ty,
                    required: p.required,
                    default: p.default.clone(),
                    doc: p.doc.clone(),
                })
                .collect(),
            usage: usage.to_string(),
        }
    }
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|")
}

pub fn render_markdown(doc: &ToolDoc) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}\n", doc.name);
    let _ = writeln!(out, "{}\n", doc.synopsis);
    let _ = writeln!(out, "Version: {}\n", doc.version);
    if doc.params.is_empty() {
        out.push_str("No parameters.\n\n");
    } else {
        out.push_str("| Parameter | Type | Required | Default | Description |\n");
        out.push_str("|---|---|---|---|---|\n");
        for p in &doc.params {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                cell(&p.name),
                p.ty,
                if p.required { "yes" } else { "no" },
                cell(p.default.as_deref().unwrap_or("")),
                cell(&p.doc)
            );
        }
        out.push('\n');
    }
    let _ = writeln!(out, "Usage:\n\n```json\n{}\n```", doc.usage);
    out
}
