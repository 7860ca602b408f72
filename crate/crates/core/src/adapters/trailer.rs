//! The `@@meta` trailer line through which chat backends report the detected
//! emotion and objects:
//!
//! ```text
//! @@meta emotion=<label>[@<confidence>] objects=<name[(X)]:<true|false>>,...
//! ```
//!
//! Both keys are optional. `objects=` must come last; its value runs to the end
//! of the line. The trailer is stripped from the reply text.

use crate::model::{EmotionLabel, EmotionTag, ObjectTag, PartLabel};

use super::{AdapterError, ResponseEnvelope};

pub const TRAILER_PREFIX: &str = "@@meta";

/// Splits a raw reply into (text without trailer, trailer body if present).
pub fn split_trailer(raw: &str) -> (String, Option<String>) {
    let lines: Vec<&str> = raw.lines().collect();
    let Some(pos) = lines.iter().rposition(|l| l.trim_start().starts_with(TRAILER_PREFIX)) else {
        return (raw.trim().to_string(), None);
    };
    let body = lines[pos].trim_start()[TRAILER_PREFIX.len()..].trim().to_string();
    let text = lines.iter().enumerate().filter(|(i, _)| *i != pos).map(|(_, l)| *l).collect::<Vec<_>>().join("\n");
    (text.trim().to_string(), Some(body))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "present" | "1" => Some(true),
        "false" | "no" | "missing" | "absent" | "0" => Some(false),
        _ => None,
    }
}

fn parse_object(item: &str) -> Result<ObjectTag, AdapterError> {
    let (name, present) =
        item.rsplit_once(':').ok_or_else(|| AdapterError::Protocol(format!("object {item:?} lacks :present")))?;
    let present =
        parse_bool(present).ok_or_else(|| AdapterError::Protocol(format!("object {item:?} has bad presence flag")))?;
    let name = name.trim();
    if let Some(stripped) = name.strip_suffix(')') {
        if let Some((base, label)) = stripped.rsplit_once('(') {
            let label = PartLabel::parse(label.trim()).map_err(|e| AdapterError::Protocol(e.to_string()))?;
            return Ok(ObjectTag::labeled(base.trim(), label, present));
        }
    }
    if name.is_empty() {
        return Err(AdapterError::Protocol("object with empty name".into()));
    }
    Ok(ObjectTag::new(name, present))
}

fn parse_emotion(raw: &str) -> Result<Option<EmotionTag>, AdapterError> {
    let raw = raw.trim();
    if raw.is_empty() || raw.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let (label, confidence) = match raw.split_once('@') {
        Some((l, c)) => {
            let c: f64 = c.parse().map_err(|_| AdapterError::Protocol(format!("bad emotion confidence {c:?}")))?;
            (l, c)
        }
        None => (raw, 1.0),
    };
    EmotionTag::new(EmotionLabel::parse(label), confidence).map(Some).map_err(|e| AdapterError::Protocol(e.to_string()))
}

fn parse_body(body: &str) -> Result<(Option<EmotionTag>, Vec<ObjectTag>), AdapterError> {
    let (head, objects_raw) = match body.find("objects=") {
        Some(i) => (&body[..i], Some(&body[i + "objects=".len()..])),
        None => (body, None),
    };
    let mut emotion = None;
    for token in head.split_whitespace() {
        match token.split_once('=') {
            Some(("emotion", value)) => emotion = parse_emotion(value)?,
            _ => return Err(AdapterError::Protocol(format!("unexpected trailer token {token:?}"))),
        }
    }
    let objects = match objects_raw {
        Some(raw) if !raw.trim().is_empty() => {
            raw.split(',').filter(|s| !s.trim().is_empty()).map(parse_object).collect::<Result<_, _>>()?
        }
        _ => Vec::new(),
    };
    Ok((emotion, objects))
}

/// Parses a backend reply into an envelope, stripping the trailer.
pub fn parse_reply(raw_text: &str, raw: serde_json::Value) -> Result<ResponseEnvelope, AdapterError> {
    let (reply_text, body) = split_trailer(raw_text);
    let (emotion, objects) = match body {
        Some(body) => parse_body(&body)?,
        None => (None, Vec::new()),
    };
    if reply_text.is_empty() {
        return Err(AdapterError::Protocol("reply text is empty".into()));
    }
    Ok(ResponseEnvelope { reply_text, emotion, objects, raw, latency_ms: 0.0 })
}

pub fn format_trailer(emotion: Option<&EmotionTag>, objects: &[ObjectTag]) -> String {
    let mut out = String::from(TRAILER_PREFIX);
    if let Some(e) = emotion {
        out.push_str(" emotion=");
        out.push_str(e.label.as_str());
        if e.confidence != 1.0 {
            out.push('@');
            out.push_str(&e.confidence.to_string());
        }
    }
    if !objects.is_empty() {
        out.push_str(" objects=");
        let items: Vec<String> = objects
            .iter()
            .map(|o| match o.part_label {
                Some(l) => format!("{}({}):{}", o.name, l, o.present),
                None => format!("{}:{}", o.name, o.present),
            })
            .collect();
        out.push_str(&items.join(","));
    }
    out
}
