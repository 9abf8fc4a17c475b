//! Newline-delimited JSON comment dumps.

use std::io::{self, BufRead};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// One comment record from a dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawComment {
    pub id: String,
    /// Parent comment id with any `t1_` prefix removed. `None` for top-level
    /// comments (no parent, or a `t3_` submission parent).
    pub parent_id: Option<String>,
    pub body: String,
    pub score: i64,
    pub created_utc: i64,
    pub thread_id: String,
}

fn as_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n.as_i64().or_else(|| {
            n.as_f64()
                .filter(|f| f.fract() == 0.0 && f.abs() < 9.0e15)
                .map(|f| f as i64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Parses one dump line. Returns `None` when the line is not a valid record.
///
/// Accepts `link_id` or `thread_id` for the thread, integer or numeric-string
/// `created_utc`, and ignores unknown fields.
pub fn parse_record(line: &str) -> Option<RawComment> {
    let value: Value = serde_json::from_str(line).ok()?;
    let obj = value.as_object()?;
    let id = as_string(obj.get("id")?)?;
    if id.is_empty() {
        return None;
    }
    let parent_id = match obj.get("parent_id") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let raw = as_string(v)?;
            if raw.starts_with("t3_") || raw.is_empty() {
                None
            } else {
                Some(raw.strip_prefix("t1_").unwrap_or(&raw).to_string())
            }
        }
    };
    if parent_id.as_deref() == Some(id.as_str()) {
        return None;
    }
    let body = obj.get("body")?.as_str()?.to_string();
    let score = as_int(obj.get("score")?)?;
    let created_utc = obj.get("created_utc").map_or(Some(0), as_int)?;
    let thread_id = obj
        .get("link_id")
        .or_else(|| obj.get("thread_id"))
        .and_then(as_string)?;
    let thread_id = thread_id
        .strip_prefix("t3_")
        .unwrap_or(&thread_id)
        .to_string();
    Some(RawComment {
        id,
        parent_id,
        body,
        score,
        created_utc,
        thread_id,
    })
}

/// Streaming reader over a dump. Malformed lines are skipped and counted;
/// blank lines are ignored.
pub struct DumpReader<R> {
    lines: io::Lines<R>,
    malformed: usize,
    read: usize,
}

pub fn parse_dump<R: BufRead>(input: R) -> DumpReader<R> {
    DumpReader {
        lines: input.lines(),
        malformed: 0,
        read: 0,
    }
}

impl<R> DumpReader<R> {
    pub fn malformed(&self) -> usize {
        self.malformed
    }

    pub fn comments_read(&self) -> usize {
        self.read
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = io::Result<RawComment>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                // Invalid UTF-8 is a bad record, not a broken stream.
                Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                    self.malformed += 1;
                    continue;
                }
                Err(e) => return Some(Err(e)),
            };
            if line.trim().is_empty() {
                continue;
            }
            match parse_record(&line) {
                Some(c) => {
                    self.read += 1;
                    return Some(Ok(c));
                }
                None => self.malformed += 1,
            }
        }
    }
}
