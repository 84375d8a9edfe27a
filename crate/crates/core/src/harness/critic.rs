use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// An external critic's judgement of one trajectory next to the ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticRecord {
    pub task_id: String,
    pub predicted_success: bool,
    pub actual_success: bool,
}

/// Fraction of records where the critic agreed with the ground truth.
pub fn critic_accuracy(records: &[CriticRecord]) -> Result<f64, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let agree = records
        .iter()
        .filter(|r| r.predicted_success == r.actual_success)
        .count();
    Ok(agree as f64 / records.len() as f64)
}

/// One JSON record per non-blank line.
pub fn load_critic_records(path: &Path) -> Result<Vec<CriticRecord>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::SchemaViolation {
                task: "<critic records>".into(),
                path: format!("line {}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(p: bool, a: bool) -> CriticRecord {
        CriticRecord {
            task_id: "t".into(),
            predicted_success: p,
            actual_success: a,
        }
    }

    #[test]
    fn accuracy() {
        assert!(matches!(critic_accuracy(&[]), Err(HarnessError::EmptyInput)));
        assert_eq!(critic_accuracy(&vec![rec(true, true); 4]).unwrap(), 1.0);
        let three = [rec(true, true), rec(false, false), rec(true, false), rec(false, false)];
        assert_eq!(critic_accuracy(&three).unwrap(), 0.75);
        let anti = [rec(true, false), rec(false, true)];
        assert_eq!(critic_accuracy(&anti).unwrap(), 0.0);
    }
}
