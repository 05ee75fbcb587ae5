//! Extraction of JSON payloads from free-form model output.

use serde::de::DeserializeOwned;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in response")]
    NoJsonFound,
    #[error("JSON does not match the expected shape: {0}")]
    SchemaMismatch(String),
}

/// Returns the first well-formed JSON object in `raw`. Markdown fences and
/// prose around the object are ignored; trailing commas are tolerated.
pub fn parse_structured(raw: &str) -> Result<Value, ParseError> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(offset) = raw[start..].find('{') {
        let open = start + offset;
        if let Some(close) = matching_brace(bytes, open) {
            let candidate = &raw[open..=close];
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(candidate) {
                return Ok(v);
            }
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&strip_trailing_commas(candidate)) {
                return Ok(v);
            }
        }
        start = open + 1;
    }
    Err(ParseError::NoJsonFound)
}

/// Like [`parse_structured`] followed by typed deserialization.
pub fn parse_as<T: DeserializeOwned>(raw: &str) -> Result<T, ParseError> {
    let value = parse_structured(raw)?;
    serde_json::from_value(value).map_err(|e| ParseError::SchemaMismatch(e.to_string()))
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn strip_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}
