use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, ChatBackend, ChatRequest, ResponseSchema, StageKind};
use crate::pipeline::check_schema;

/// Case id that matches any case for a stage. Exact keys win over it.
pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub stage: StageKind,
    pub case_id: String,
    /// Replies for attempt 1, 2, ... The last reply repeats for any later
    /// attempt. A JSON string is sent verbatim (useful for malformed
    /// output); any other JSON value is serialized.
    pub responses: Vec<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidConfig(format!("cannot read script {}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::InvalidConfig(format!("malformed script {}: {e}", path.display())))
    }

    pub fn push(&mut self, stage: StageKind, case_id: impl Into<String>, responses: Vec<Value>) -> &mut Self {
        self.entries.push(ScriptEntry {
            stage,
            case_id: case_id.into(),
            responses,
        });
        self
    }
}

/// Answers by exact (stage, case id) lookup and fails loudly on unknown keys.
/// Stateless: the reply depends only on the key and the attempt number, so
/// repeated runs produce identical traces.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    replies: HashMap<(StageKind, String), Vec<String>>,
}

/// Builds a scripted oracle, checking structured replies against their
/// stage schemas up front.
pub fn scripted_oracle(script: Script) -> Result<ScriptedOracle, BackendError> {
    let mut replies = HashMap::new();
    for entry in script.entries {
        if entry.responses.is_empty() {
            return Err(BackendError::InvalidConfig(format!(
                "script entry {}/{} has no responses",
                entry.stage.as_str(),
                entry.case_id
            )));
        }
        let schema = entry.stage.response_schema();
        let mut texts = Vec::with_capacity(entry.responses.len());
        for value in entry.responses {
            match value {
                Value::String(s) => texts.push(s),
                other => {
                    if schema != ResponseSchema::FreeText {
                        check_schema(schema, &other).map_err(|e| {
                            BackendError::InvalidConfig(format!(
                                "script entry {}/{} does not match its schema: {e}",
                                entry.stage.as_str(),
                                entry.case_id
                            ))
                        })?;
                    }
                    texts.push(serde_json::to_string_pretty(&other).expect("json value serializes"));
                }
            }
        }
        replies.insert((entry.stage, entry.case_id), texts);
    }
    Ok(ScriptedOracle { replies })
}

impl ChatBackend for ScriptedOracle {
    fn describe(&self) -> String {
        "scripted-oracle".into()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let tag = request
            .tag
            .as_ref()
            .ok_or_else(|| BackendError::InvalidConfig("scripted oracle needs tagged requests".into()))?;
        let replies = self
            .replies
            .get(&(tag.stage, tag.case_id.clone()))
            .or_else(|| self.replies.get(&(tag.stage, WILDCARD.to_string())))
            .ok_or_else(|| BackendError::UnknownScriptKey {
                stage: tag.stage.as_str().into(),
                case_id: tag.case_id.clone(),
            })?;
        let i = (tag.attempt.max(1) as usize - 1).min(replies.len() - 1);
        Ok(replies[i].clone())
    }
}
