use std::path::PathBuf;

use serde_yaml::{Mapping, Value};

use super::{ExprMap, Job, JobBody, Step, StepBody, Workflow};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed workflow: {0}")]
    MalformedYaml(String),
    #[error("workflow defines no jobs")]
    MissingJobs,
    #[error("workflow defines no `on:` trigger events")]
    MissingTrigger,
    #[error("job `{job}`: {reason}")]
    InvalidJob { job: String, reason: String },
    #[error("job `{job}` step {index}: {reason}")]
    InvalidStep {
        job: String,
        index: usize,
        reason: String,
    },
}

/// Parses raw file bytes; non-UTF-8 input is reported as malformed.
pub fn parse_workflow_bytes(
    bytes: &[u8],
    source_path: impl Into<PathBuf>,
) -> Result<Workflow, ParseError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ParseError::MalformedYaml(format!("invalid UTF-8: {e}")))?;
    parse_workflow(text, source_path)
}

pub fn parse_workflow(text: &str, source_path: impl Into<PathBuf>) -> Result<Workflow, ParseError> {
    let doc: Value =
        serde_yaml::from_str(text).map_err(|e| ParseError::MalformedYaml(e.to_string()))?;
    let Value::Mapping(root) = doc else {
        return Err(ParseError::MalformedYaml(
            "top-level value is not a mapping".into(),
        ));
    };

    let triggers = parse_triggers(&root);
    if triggers.is_empty() {
        return Err(ParseError::MissingTrigger);
    }

    let jobs = match root.get("jobs") {
        Some(Value::Mapping(jobs)) if !jobs.is_empty() => jobs,
        _ => return Err(ParseError::MissingJobs),
    };
    let jobs = jobs
        .iter()
        .map(|(id, body)| parse_job(&scalar_text(id), body))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Workflow {
        source_path: source_path.into(),
        name: root.get("name").map(scalar_text),
        triggers,
        env: expr_map(root.get("env")),
        permissions: root.get("permissions").map(raw_text),
        jobs,
    })
}

/// `on:` accepts a single event, a list, or a map keyed by event. YAML 1.1
/// loaders turn a bare `on` key into boolean `true`, so accept that spelling.
fn parse_triggers(root: &Mapping) -> Vec<String> {
    let on = root.get("on").or_else(|| root.get(Value::Bool(true)));
    let mut events: Vec<String> = match on {
        Some(Value::String(s)) => vec![s.trim().to_string()],
        Some(Value::Sequence(seq)) => seq.iter().map(scalar_text).collect(),
        Some(Value::Mapping(map)) => map.keys().map(scalar_text).collect(),
        _ => Vec::new(),
    };
    events.retain(|e| !e.is_empty());
    events
}

fn parse_job(id: &str, value: &Value) -> Result<Job, ParseError> {
    let invalid = |reason: &str| ParseError::InvalidJob {
        job: id.to_string(),
        reason: reason.to_string(),
    };
    let Value::Mapping(map) = value else {
        return Err(invalid("job body is not a mapping"));
    };

    let body = if let Some(uses) = map.get("uses") {
        let Value::String(uses) = uses else {
            return Err(invalid("`uses` is not a string"));
        };
        JobBody::Reusable {
            uses: uses.trim().to_string(),
            with_args: expr_map(map.get("with")),
            secrets: expr_map(map.get("secrets")),
        }
    } else {
        let steps = match map.get("steps") {
            Some(Value::Sequence(seq)) if !seq.is_empty() => seq,
            Some(Value::Sequence(_)) => return Err(invalid("`steps` is empty")),
            Some(_) => return Err(invalid("`steps` is not a list")),
            None => return Err(invalid("job has neither `steps` nor `uses`")),
        };
        let steps = steps
            .iter()
            .enumerate()
            .map(|(index, step)| parse_step(id, index, step))
            .collect::<Result<Vec<_>, _>>()?;
        JobBody::Steps(steps)
    };

    Ok(Job {
        id: id.to_string(),
        display_name: map.get("name").map(scalar_text),
        runs_on: runner_labels(map.get("runs-on")),
        env: expr_map(map.get("env")),
        body,
    })
}

fn parse_step(job: &str, index: usize, value: &Value) -> Result<Step, ParseError> {
    let invalid = |reason: &str| ParseError::InvalidStep {
        job: job.to_string(),
        index,
        reason: reason.to_string(),
    };
    let Value::Mapping(map) = value else {
        return Err(invalid("step is not a mapping"));
    };

    let body = match (map.get("uses"), map.get("run")) {
        (Some(_), Some(_)) => return Err(invalid("step has both `uses` and `run`")),
        (None, None) => return Err(invalid("step has neither `uses` nor `run`")),
        (Some(Value::String(uses)), None) => StepBody::Uses {
            raw_uses: uses.trim().to_string(),
            with_args: expr_map(map.get("with")),
        },
        (Some(_), None) => return Err(invalid("`uses` is not a string")),
        (None, Some(run)) => StepBody::Run {
            script_text: scalar_text(run),
            shell: map.get("shell").map(scalar_text),
        },
    };

    Ok(Step {
        index,
        display_name: map.get("name").map(scalar_text),
        env: expr_map(map.get("env")),
        body,
    })
}

fn runner_labels(value: Option<&Value>) -> Vec<String> {
    match value {
        Some(Value::Sequence(seq)) => seq.iter().map(scalar_text).collect(),
        Some(Value::Mapping(map)) => match map.get("labels") {
            Some(labels) => runner_labels(Some(labels)),
            None => map.get("group").map(scalar_text).into_iter().collect(),
        },
        Some(other) => vec![scalar_text(other)],
        None => Vec::new(),
    }
}

/// Non-mapping values (e.g. a whole-block `${{ fromJSON(...) }}`) are kept
/// under the empty key so lexical scans still see them.
fn expr_map(value: Option<&Value>) -> ExprMap {
    match value {
        Some(Value::Mapping(map)) => map
            .iter()
            .map(|(k, v)| (scalar_text(k), scalar_text(v)))
            .collect(),
        Some(Value::Null) | None => ExprMap::new(),
        Some(other) => [(String::new(), scalar_text(other))].into_iter().collect(),
    }
}

fn scalar_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::Null => String::new(),
        Value::Tagged(tagged) => scalar_text(&tagged.value),
        other => raw_text(other),
    }
}

fn raw_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => serde_yaml::to_string(other)
            .map(|s| s.trim_end().to_string())
            .unwrap_or_default(),
    }
}
