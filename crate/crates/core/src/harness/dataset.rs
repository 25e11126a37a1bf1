use super::HarnessError;
use crate::model::Problem;
use indexmap::IndexMap;
use serde::Deserialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

/// One line of a dataset file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: Value,
    question: String,
    #[serde(default)]
    images: Vec<String>,
    #[serde(default)]
    options: IndexMap<String, Value>,
    #[serde(default)]
    answer: Option<Value>,
    #[serde(default)]
    tags: BTreeMap<String, Value>,
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_record(line: &str) -> Result<Problem, String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = scalar_text(&r.id).ok_or("id must be a string or number")?;
    let options = r
        .options
        .iter()
        .map(|(code, text)| {
            scalar_text(text)
                .map(|t| (code.clone(), t))
                .ok_or_else(|| format!("option {code:?} must be a string or number"))
        })
        .collect::<Result<IndexMap<_, _>, _>>()?;
    let answer = match &r.answer {
        None | Some(Value::Null) => None,
        Some(v) => Some(scalar_text(v).ok_or("answer must be a string or number")?),
    };
    let tags = r
        .tags
        .iter()
        .map(|(k, v)| {
            scalar_text(v)
                .map(|t| (k.clone(), t))
                .ok_or_else(|| format!("tag {k:?} must be a scalar"))
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Problem::from_option_map(id, r.question, r.images, &options, answer, tags).map_err(|e| e.to_string())
}

/// Parses JSON-lines dataset text. Blank lines are skipped; the first bad
/// record aborts with its 1-based line number.
pub fn parse_dataset(text: &str) -> Result<Vec<Problem>, HarnessError> {
    let mut problems = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| HarnessError::Dataset { line: i + 1, message };
        let p = parse_record(line).map_err(bad)?;
        if !ids.insert(p.id.clone()) {
            return Err(bad(format!("duplicate id {:?}", p.id)));
        }
        problems.push(p);
    }
    Ok(problems)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Problem>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_dataset(&text)
}
