use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackSource {
    Human,
    Rule,
    Model,
}

/// Natural-language feedback on a session, optionally pinned to a step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub session_id: String,
    pub step: Option<u64>,
    pub text: String,
    pub source: FeedbackSource,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("feedback text is empty")]
pub struct EmptyText;

impl FeedbackRecord {
    pub fn new(
        session_id: impl Into<String>,
        step: Option<u64>,
        text: impl Into<String>,
        source: FeedbackSource,
    ) -> Result<Self, EmptyText> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(EmptyText);
        }
        Ok(FeedbackRecord {
            session_id: session_id.into(),
            step,
            text,
            source,
            timestamp: Utc::now(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_rejected() {
        assert_eq!(FeedbackRecord::new("s", None, "  ", FeedbackSource::Human), Err(EmptyText));
        let r = FeedbackRecord::new("s", Some(4), "wrong button", FeedbackSource::Human).unwrap();
        assert_eq!(r.step, Some(4));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["source"], "human");
    }
}
