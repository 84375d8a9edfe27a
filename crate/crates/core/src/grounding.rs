//! GUI grounding: (instruction, screenshot, annotated click) records, scoring
//! of predicted clicks, and success-rate tables.
//!
//! A predicted point matches the annotated box when it lies in the half-open
//! rectangle `[x, x+w) × [y, y+h)`, so a point on the right or bottom edge is
//! outside and adjacent boxes never overlap.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Sample fields `aggregate` can group by.
pub const GROUP_FIELDS: [&str; 3] = ["platform", "application", "click_type"];

#[derive(Debug, thiserror::Error)]
pub enum GroundingError {
    #[error("line {line}: {path}: {message}")]
    SchemaViolation {
        line: usize,
        path: String,
        message: String,
    },
    #[error("line {line}: bounding box of {id} lies outside the {width}x{height} image")]
    BBoxOutOfImage {
        line: usize,
        id: String,
        width: u32,
        height: u32,
    },
    #[error("prediction for {found} scored against sample {expected}")]
    IdMismatch { expected: String, found: String },
    #[error("prediction refers to unknown sample {0}")]
    UnknownSample(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("unknown group field {0:?} (expected platform, application or click_type)")]
    UnknownField(String),
    #[error("bucket edges are empty")]
    EmptyEdges,
    #[error("bucket edges must be strictly ascending")]
    UnorderedEdges,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickType {
    Single,
    Double,
    Right,
}

impl ClickType {
    pub fn as_str(self) -> &'static str {
        match self {
            ClickType::Single => "single",
            ClickType::Double => "double",
            ClickType::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Half-open membership.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64
            && px < self.x as f64 + self.w as f64
            && py >= self.y as f64
            && py < self.y as f64 + self.h as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    fn inside(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenshotRef {
    /// Relative to the dataset file.
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedClick {
    pub bbox: BBox,
    pub click_type: ClickType,
}

fn default_schema() -> u32 {
    DATASET_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingSample {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub id: String,
    pub instruction: String,
    pub screenshot: ScreenshotRef,
    pub action: AnnotatedClick,
    pub platform: String,
    pub application: String,
}

impl GroundingSample {
    /// Checks one record; `line` only labels errors.
    pub fn validate(&self, line: usize) -> Result<(), GroundingError> {
        let violation = |path: &str, message: &str| GroundingError::SchemaViolation {
            line,
            path: path.into(),
            message: message.into(),
        };
        if self.schema_version != DATASET_SCHEMA_VERSION {
            return Err(violation("schema_version", "unsupported version"));
        }
        if self.id.trim().is_empty() {
            return Err(violation("id", "empty id"));
        }
        if self.instruction.trim().is_empty() {
            return Err(violation("instruction", "empty instruction"));
        }
        let shot = &self.screenshot;
        if shot.width == 0 || shot.height == 0 {
            return Err(violation("screenshot", "image has no pixels"));
        }
        let b = &self.action.bbox;
        if b.w == 0 {
            return Err(violation("action.bbox.w", "width must be positive"));
        }
        if b.h == 0 {
            return Err(violation("action.bbox.h", "height must be positive"));
        }
        if !b.inside(shot.width, shot.height) {
            return Err(GroundingError::BBoxOutOfImage {
                line,
                id: self.id.clone(),
                width: shot.width,
                height: shot.height,
            });
        }
        Ok(())
    }

    fn field(&self, name: &str) -> Result<String, GroundingError> {
        Ok(match name {
            "platform" => self.platform.clone(),
            "application" => self.application.clone(),
            "click_type" => self.action.click_type.as_str().to_string(),
            other => return Err(GroundingError::UnknownField(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictedPoint {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub point: PredictedPoint,
    pub click_type: ClickType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub id: String,
    pub location_match: bool,
    pub type_match: bool,
    pub success: bool,
}

fn parse_lines<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>, GroundingError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(l))
                .map(|v| (line, v))
                .map_err(|e| GroundingError::SchemaViolation {
                    line,
                    path: e.path().to_string(),
                    message: e.inner().to_string(),
                })
        })
        .collect()
}

pub fn parse_dataset(text: &str) -> Result<Vec<GroundingSample>, GroundingError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, s) in parse_lines::<GroundingSample>(text)? {
        s.validate(line)?;
        if !seen.insert(s.id.clone()) {
            return Err(GroundingError::DuplicateId(s.id));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<GroundingSample>, GroundingError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, GroundingError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, p) in parse_lines::<Prediction>(text)? {
        if !p.point.x.is_finite() || !p.point.y.is_finite() {
            return Err(GroundingError::SchemaViolation {
                line,
                path: "point".into(),
                message: "coordinates must be finite".into(),
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(GroundingError::DuplicateId(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, GroundingError> {
    parse_predictions(&std::fs::read_to_string(path)?)
}

/// Validates `sample` and appends it as one line to the dataset at `path`.
pub fn append_sample(path: &Path, sample: &GroundingSample) -> Result<(), GroundingError> {
    sample.validate(0)?;
    if path.exists() && load_dataset(path)?.iter().any(|s| s.id == sample.id) {
        return Err(GroundingError::DuplicateId(sample.id.clone()));
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(sample).expect("sample serializes");
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn score(sample: &GroundingSample, pred: &Prediction) -> Result<GroundingResult, GroundingError> {
    if sample.id != pred.id {
        return Err(GroundingError::IdMismatch {
            expected: sample.id.clone(),
            found: pred.id.clone(),
        });
    }
    let location_match = sample.action.bbox.contains(pred.point.x, pred.point.y);
    let type_match = sample.action.click_type == pred.click_type;
    Ok(GroundingResult {
        id: sample.id.clone(),
        location_match,
        type_match,
        success: location_match && type_match,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub results: Vec<GroundingResult>,
    /// Samples with no prediction; they are not in `results`.
    pub unpredicted: Vec<String>,
}

/// Scores every prediction against its sample.
pub fn score_all(
    samples: &[GroundingSample],
    preds: &[Prediction],
) -> Result<ScoreReport, GroundingError> {
    let by_id: HashMap<&str, &GroundingSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let results = preds
        .iter()
        .map(|p| {
            let s = by_id
                .get(p.id.as_str())
                .ok_or_else(|| GroundingError::UnknownSample(p.id.clone()))?;
            score(s, p)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let predicted: HashSet<&str> = preds.iter().map(|p| p.id.as_str()).collect();
    let unpredicted = samples
        .iter()
        .filter(|s| !predicted.contains(s.id.as_str()))
        .map(|s| s.id.clone())
        .collect();
    Ok(ScoreReport {
        results,
        unpredicted,
    })
}

fn percent(successes: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| successes as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: Vec<String>,
    pub n: usize,
    pub successes: usize,
    /// Raw fraction in [0, 1].
    pub rate: f64,
    /// Percentage to one decimal place.
    pub percent: String,
}

/// Renders a fraction as a percentage to one decimal place.
pub fn format_percent(rate: f64) -> String {
    format!("{:.1}", rate * 100.0)
}

fn sample_index<'a>(
    results: &'a [GroundingResult],
    samples: &'a [GroundingSample],
) -> Result<Vec<(&'a GroundingResult, &'a GroundingSample)>, GroundingError> {
    let by_id: HashMap<&str, &GroundingSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    results
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .map(|s| (r, *s))
                .ok_or_else(|| GroundingError::UnknownSample(r.id.clone()))
        })
        .collect()
}

/// Success rate per distinct combination of `group_by` fields, rows sorted by
/// group. An empty `group_by` gives one overall row.
pub fn aggregate(
    results: &[GroundingResult],
    samples: &[GroundingSample],
    group_by: &[&str],
) -> Result<Vec<GroupRow>, GroundingError> {
    if let Some(f) = group_by.iter().find(|f| !GROUP_FIELDS.contains(f)) {
        return Err(GroundingError::UnknownField(f.to_string()));
    }
    let mut groups: BTreeMap<Vec<String>, (usize, usize)> = BTreeMap::new();
    for (r, s) in sample_index(results, samples)? {
        let key = group_by.iter().map(|f| s.field(f)).collect::<Result<Vec<_>, _>>()?;
        let e = groups.entry(key).or_default();
        e.0 += 1;
        e.1 += r.success as usize;
    }
    Ok(groups
        .into_iter()
        .map(|(group, (n, successes))| {
            let rate = percent(successes, n).unwrap_or(0.0);
            GroupRow {
                group,
                n,
                successes,
                rate,
                percent: format_percent(rate),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    /// Inclusive lower bound on bbox area in pixels².
    pub lo: u64,
    /// Exclusive upper bound; `None` for the last bucket.
    pub hi: Option<u64>,
    pub n: usize,
    pub successes: usize,
    /// `None` for an empty bucket.
    pub rate: Option<f64>,
    pub percent: Option<String>,
}

impl BucketRow {
    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("[{}, {})", self.lo, hi),
            None => format!("[{}, inf)", self.lo),
        }
    }
}

/// Groups results by annotated bbox area into `[0, e0), [e0, e1), ..., [ek, inf)`.
pub fn area_buckets(
    results: &[GroundingResult],
    samples: &[GroundingSample],
    edges: &[u64],
) -> Result<Vec<BucketRow>, GroundingError> {
    if edges.is_empty() {
        return Err(GroundingError::EmptyEdges);
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GroundingError::UnorderedEdges);
    }
    let mut counts = vec![(0usize, 0usize); edges.len() + 1];
    for (r, s) in sample_index(results, samples)? {
        let area = s.action.bbox.area();
        let b = edges.partition_point(|&e| e <= area);
        counts[b].0 += 1;
        counts[b].1 += r.success as usize;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, (n, successes))| {
            let rate = percent(successes, n);
            BucketRow {
                lo: if i == 0 { 0 } else { edges[i - 1] },
                hi: edges.get(i).copied(),
                n,
                successes,
                rate,
                percent: rate.map(format_percent),
            }
        })
        .collect())
}

/// Aligned plain-text table; the first row is the header.
pub fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

pub fn group_table(group_by: &[&str], rows: &[GroupRow]) -> String {
    let mut header: Vec<String> = group_by.iter().map(|s| s.to_string()).collect();
    if header.is_empty() {
        header.push("group".into());
    }
    header.extend(["n".into(), "success %".into()]);
    let mut table = vec![header];
    for r in rows {
        let mut line = if r.group.is_empty() { vec!["all".to_string()] } else { r.group.clone() };
        line.push(r.n.to_string());
        line.push(r.percent.clone());
        table.push(line);
    }
    render_table(&table)
}

pub fn bucket_table(rows: &[BucketRow]) -> String {
    let mut table = vec![vec!["area".to_string(), "n".into(), "success %".into()]];
    for r in rows {
        table.push(vec![
            r.label(),
            r.n.to_string(),
            r.percent.clone().unwrap_or_else(|| "-".into()),
        ]);
    }
    render_table(&table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, bbox: BBox, click: ClickType) -> GroundingSample {
        GroundingSample {
            schema_version: 1,
            id: id.into(),
            instruction: "press the button".into(),
            screenshot: ScreenshotRef {
                path: "s.png".into(),
                width: 100,
                height: 80,
            },
            action: AnnotatedClick {
                bbox,
                click_type: click,
            },
            platform: "linux".into(),
            application: "os".into(),
        }
    }

    fn pred(id: &str, x: f64, y: f64, click: ClickType) -> Prediction {
        Prediction {
            id: id.into(),
            point: PredictedPoint { x, y },
            click_type: click,
        }
    }

    const B: BBox = BBox { x: 10, y: 20, w: 30, h: 5 };

    #[test]
    fn scoring_cases() {
        let s = sample("a", B, ClickType::Single);
        let (cx, cy) = B.center();
        let r = score(&s, &pred("a", cx, cy, ClickType::Single)).unwrap();
        assert!(r.location_match && r.type_match && r.success);
        let r = score(&s, &pred("a", cx, cy, ClickType::Double)).unwrap();
        assert!(r.location_match && !r.type_match && !r.success);
        let r = score(&s, &pred("a", 40.0, 20.0, ClickType::Single)).unwrap();
        assert!(!r.location_match);
        assert!(score(&s, &pred("a", 10.0, 20.0, ClickType::Single)).unwrap().success);
        assert!(!score(&s, &pred("a", 39.9, 25.0, ClickType::Single)).unwrap().location_match);
        assert!(matches!(
            score(&s, &pred("b", cx, cy, ClickType::Single)),
            Err(GroundingError::IdMismatch { .. })
        ));
    }

    #[test]
    fn validation() {
        let zero = sample("a", BBox { w: 0, ..B }, ClickType::Single);
        assert!(matches!(zero.validate(3), Err(GroundingError::SchemaViolation { line: 3, .. })));
        let wide = sample("a", BBox { x: 90, w: 11, ..B }, ClickType::Single);
        assert!(matches!(wide.validate(1), Err(GroundingError::BBoxOutOfImage { .. })));
        let flush = sample("a", BBox { x: 90, w: 10, y: 0, h: 80 }, ClickType::Right);
        flush.validate(1).unwrap();

        let line = serde_json::to_string(&flush).unwrap();
        let text = format!("{line}\n\n{}\n", line.replace("\"right\"", "\"middle\""));
        match parse_dataset(&text) {
            Err(GroundingError::SchemaViolation { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "action.click_type");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_dataset(&format!("{line}\n{line}\n")),
            Err(GroundingError::DuplicateId(_))
        ));
        assert!(parse_predictions(r#"{"id":"a","point":{"x":1e999,"y":0},"click_type":"single"}"#).is_err());
    }

    #[test]
    fn buckets_partition_areas() {
        let mk = |id: &str, w, h| sample(id, BBox { x: 0, y: 0, w, h }, ClickType::Single);
        let samples = vec![mk("a", 5, 10), mk("b", 10, 50), mk("c", 50, 80), mk("d", 10, 10)];
        let results: Vec<_> = samples
            .iter()
            .map(|s| score(s, &pred(&s.id, 0.0, 0.0, ClickType::Single)).unwrap())
            .collect();
        let rows = area_buckets(&results, &samples, &[100, 1000]).unwrap();
        assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), [1, 2, 1]);
        assert_eq!(rows[1].label(), "[100, 1000)");
        assert_eq!(rows[2].hi, None);
        assert!(matches!(area_buckets(&results, &samples, &[]), Err(GroundingError::EmptyEdges)));
        assert!(matches!(
            area_buckets(&results, &samples, &[5, 5]),
            Err(GroundingError::UnorderedEdges)
        ));
        let table = bucket_table(&rows);
        assert!(table.lines().nth(2).unwrap().starts_with("[0, 100)"));
    }

    #[test]
    fn aggregate_overall_and_unknown_field() {
        let samples = vec![sample("a", B, ClickType::Single), sample("b", B, ClickType::Right)];
        let results = vec![
            score(&samples[0], &pred("a", 11.0, 21.0, ClickType::Single)).unwrap(),
            score(&samples[1], &pred("b", 11.0, 21.0, ClickType::Single)).unwrap(),
        ];
        let rows = aggregate(&results, &samples, &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].percent, "50.0");
        let by_type = aggregate(&results, &samples, &["click_type"]).unwrap();
        assert_eq!(by_type[0].group, ["right"]);
        assert!(matches!(
            aggregate(&results, &samples, &["os"]),
            Err(GroundingError::UnknownField(_))
        ));
        assert_eq!(format_percent(2.0 / 3.0), "66.7");
    }
}
