use serde::Serialize;

use super::{ExprMap, JobBody, Location, StepBody, Workflow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialScope {
    /// Top-level `env:`; visible to every step of every job.
    WorkflowEnv,
    /// Job `env:`, or `with:`/`secrets:` of a reusable workflow call.
    JobEnv,
    /// Step `env:`, or the step's `run:` script text.
    StepEnv,
    /// Step `with:` argument.
    StepWith,
}

impl CredentialScope {
    /// Whether every step of the enclosing job (or workflow) can read it.
    pub fn is_broad(self) -> bool {
        matches!(self, Self::WorkflowEnv | Self::JobEnv)
    }
}

/// One `secrets.<name>` accessor found in a workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CredentialUse {
    pub secret_name: String,
    /// The enclosing `${{ ... }}` expression, verbatim.
    pub expression: String,
    pub scope: CredentialScope,
    pub location: Location,
    /// Set when the accessor was found in `run:` shell text rather than an
    /// env or `with:` value.
    pub in_run_script: bool,
}

/// Every `secrets.<name>` accessor in env blocks, `with:` arguments and
/// `run:` scripts, in source order.
pub fn extract_credentials(workflow: &Workflow) -> Vec<CredentialUse> {
    let file = workflow.file_label();
    let mut out = Vec::new();
    let push_map = |map: &ExprMap, scope: CredentialScope, loc: &Location, out: &mut Vec<_>| {
        for value in map.values() {
            push_text(value, scope, loc, false, out);
        }
    };

    push_map(
        &workflow.env,
        CredentialScope::WorkflowEnv,
        &Location::workflow(&file),
        &mut out,
    );
    for job in &workflow.jobs {
        let job_loc = Location::job(&file, &job.id);
        push_map(&job.env, CredentialScope::JobEnv, &job_loc, &mut out);
        match &job.body {
            JobBody::Reusable {
                with_args, secrets, ..
            } => {
                push_map(with_args, CredentialScope::JobEnv, &job_loc, &mut out);
                push_map(secrets, CredentialScope::JobEnv, &job_loc, &mut out);
            }
            JobBody::Steps(steps) => {
                for step in steps {
                    let loc = Location::step(&file, &job.id, step.index);
                    push_map(&step.env, CredentialScope::StepEnv, &loc, &mut out);
                    match &step.body {
                        StepBody::Uses { with_args, .. } => {
                            push_map(with_args, CredentialScope::StepWith, &loc, &mut out);
                        }
                        StepBody::Run { script_text, .. } => {
                            push_text(script_text, CredentialScope::StepEnv, &loc, true, &mut out);
                        }
                    }
                }
            }
        }
    }
    out
}

fn push_text(
    text: &str,
    scope: CredentialScope,
    location: &Location,
    in_run_script: bool,
    out: &mut Vec<CredentialUse>,
) {
    for (secret_name, expression) in find_secret_accessors(text) {
        out.push(CredentialUse {
            secret_name,
            expression,
            scope,
            location: location.clone(),
            in_run_script,
        });
    }
}

/// Lexically finds `secrets.NAME` (and `secrets['NAME']`) accessors inside
/// `${{ ... }}` expressions. Returns `(name, enclosing expression)` pairs.
pub fn find_secret_accessors(text: &str) -> Vec<(String, String)> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("${{") {
        let after = &rest[start..];
        let end = after.find("}}").map_or(after.len(), |i| i + 2);
        let expr = &after[..end];
        for name in accessors_in(expr) {
            found.push((name, expr.to_string()));
        }
        rest = &after[end..];
    }
    found
}

fn accessors_in(expr: &str) -> Vec<String> {
    const NEEDLE: &str = "secrets";
    let bytes = expr.as_bytes();
    let mut names = Vec::new();
    let mut from = 0;
    while let Some(pos) = expr[from..].find(NEEDLE) {
        let at = from + pos;
        from = at + NEEDLE.len();
        if at > 0 && is_ident_byte(bytes[at - 1]) || at > 0 && bytes[at - 1] == b'.' {
            continue;
        }
        let tail = &expr[from..];
        let name = if let Some(dotted) = tail.strip_prefix('.') {
            take_ident(dotted)
        } else if let Some(bracket) = tail.strip_prefix('[') {
            let quoted = bracket.trim_start();
            match quoted.chars().next() {
                Some(q @ ('\'' | '"')) => {
                    let inner = &quoted[1..];
                    inner.find(q).map(|end| &inner[..end]).unwrap_or("")
                }
                _ => "",
            }
        } else {
            ""
        };
        if !name.is_empty() {
            names.push(name.to_string());
        }
    }
    names
}

fn take_ident(s: &str) -> &str {
    let end = s
        .bytes()
        .position(|b| !(is_ident_byte(b) || b == b'-'))
        .unwrap_or(s.len());
    &s[..end]
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}
