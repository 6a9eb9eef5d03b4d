//! Chat-completions proposer backed by a vision-language model server.
//!
//! Each call sends one user message whose parts interleave the program text
//! and PNG images: images beyond the `<img>` markers (a target render) come
//! first, then text segments split at each marker with the matching preview
//! after it. The reply must be one SBSC node block or the `outputs:` block.

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};

use super::{Proposal, Proposer, ProposerContext, ProposerError, IMG_MARKER};
use crate::engine::encode_png;

pub const API_KEY_ENV: &str = "PROCMAT_API_KEY";

pub const SYSTEM_PROMPT: &str = "You write procedural material graphs in SBSC, one node at a time. \
Reply with exactly one node block indented by two spaces (name line, then type, optional outputs, \
params and inputs), or with the final `outputs:` block binding basecolor, normal, roughness, \
metallic and height when the graph is complete. No commentary.";

#[derive(Debug, Clone)]
pub struct HttpProposer {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub api_key: Option<String>,
    /// Attempts per call before giving up.
    pub max_attempts: usize,
    pub retry_delay: Duration,
    /// Requests and replies are written here when set.
    pub log_dir: Option<PathBuf>,
    calls: usize,
    agent: ureq::Agent,
}

impl HttpProposer {
    /// Reads the API key from `PROCMAT_API_KEY`.
    pub fn new(endpoint: &str, model: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        HttpProposer {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            temperature: 0.8,
            top_p: 0.95,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_attempts: 3,
            retry_delay: Duration::from_millis(500),
            log_dir: None,
            calls: 0,
            agent,
        }
    }

    pub fn request_body(&self, ctx: &ProposerContext) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "messages": [
                {"role": "system", "content": [{"type": "text", "text": SYSTEM_PROMPT}]},
                {"role": "user", "content": content_parts(ctx)},
            ],
        })
    }

    fn log(&self, name: String, body: &str) {
        if let Some(dir) = &self.log_dir {
            let _ = std::fs::create_dir_all(dir);
            let _ = std::fs::write(dir.join(name), body);
        }
    }

    fn send(&self, body: &str) -> Result<String, String> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

fn image_part(img: &crate::engine::ImageBuffer) -> Value {
    let png = encode_png(img).unwrap_or_default();
    json!({
        "type": "image",
        "media_type": "image/png",
        "data": base64::engine::general_purpose::STANDARD.encode(png),
    })
}

/// Message parts for `ctx`, images in slot order.
pub fn content_parts(ctx: &ProposerContext) -> Vec<Value> {
    let segments: Vec<&str> = ctx.program_text.split(IMG_MARKER).collect();
    let markers = segments.len() - 1;
    let lead = ctx.image_slots.len().saturating_sub(markers);
    let mut parts = Vec::new();
    let mut slots = ctx.image_slots.iter();
    for img in slots.by_ref().take(lead) {
        parts.push(image_part(img));
    }
    for (i, seg) in segments.iter().enumerate() {
        if !seg.is_empty() {
            parts.push(json!({"type": "text", "text": seg}));
        }
        if i < markers {
            if let Some(img) = slots.next() {
                parts.push(image_part(img));
            }
        }
    }
    parts
}

/// Turns completion text into a proposal: a leading `outputs:` line ends the
/// graph, anything else is a node block. Code fences are stripped.
pub fn parse_completion(text: &str) -> Proposal {
    let mut lines: Vec<&str> = text.lines().collect();
    if lines.first().is_some_and(|l| l.trim_start().starts_with("```")) {
        lines.remove(0);
        if let Some(end) = lines.iter().position(|l| l.trim_start().starts_with("```")) {
            lines.truncate(end);
        }
    }
    while lines.first().is_some_and(|l| l.trim().is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    let mut body = lines.join("\n");
    body.push('\n');
    if lines.first().is_some_and(|l| l.starts_with("outputs:")) {
        Proposal::End(body)
    } else {
        Proposal::Node(body)
    }
}

/// The assistant text of a chat-completions reply.
pub fn completion_text(reply: &Value) -> Option<String> {
    let content = &reply["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p["text"].as_str())
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl Proposer for HttpProposer {
    fn propose(&mut self, ctx: &ProposerContext) -> Result<Proposal, ProposerError> {
        self.calls += 1;
        let body = self.request_body(ctx).to_string();
        self.log(format!("request_{:04}.json", self.calls), &body);
        let mut last = String::new();
        for attempt in 0..self.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry_delay);
            }
            match self.send(&body) {
                Ok(reply) => {
                    self.log(format!("response_{:04}.json", self.calls), &reply);
                    let text = serde_json::from_str::<Value>(&reply)
                        .ok()
                        .and_then(|v| completion_text(&v));
                    // a malformed reply is a bad proposal, not a transport error
                    return Ok(parse_completion(&text.unwrap_or(reply)));
                }
                Err(e) => last = e,
            }
        }
        Err(ProposerError::Failure(format!(
            "{} attempts to {} failed: {last}",
            self.max_attempts, self.endpoint
        )))
    }
}
