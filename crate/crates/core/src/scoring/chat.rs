//! Zero-shot classification through an OpenAI-compatible chat endpoint.

use serde::{Deserialize, Serialize};

use super::HttpClient;
use crate::corpus::LabelCatalog;
use crate::error::{Error, Result};
use crate::prompting::{FilledPrompt, MASK_TOKEN};

/// Replaces the mask marker in chat prompts.
pub const INDEX_INSTRUCTION: &str = "Return the index of the label, please.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsedLabel {
    Index(usize),
    Failure,
}

impl ParsedLabel {
    pub fn index(self) -> Option<usize> {
        match self {
            ParsedLabel::Index(i) => Some(i),
            ParsedLabel::Failure => None,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: u8,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Debug, Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    id: String,
    endpoint: String,
    model: String,
    http: HttpClient,
}

impl ChatClient {
    /// A non-empty `PL_API_KEY` replaces any bearer token already on `http`.
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, model: impl Into<String>, http: HttpClient) -> Self {
        let token = std::env::var("PL_API_KEY").ok().filter(|k| !k.is_empty());
        Self {
            id: id.into(),
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            http: match token {
                Some(token) => http.with_bearer(Some(token)),
                None => http,
            },
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Sends one user message at temperature 0 and returns the first
    /// choice's content.
    pub fn complete(&self, content: &str) -> Result<String> {
        let url = format!("{}/v1/chat/completions", self.endpoint);
        let request = ChatRequest {
            model: &self.model,
            messages: [ChatMessage { role: "user", content }],
            temperature: 0,
        };
        let reply: ChatResponse = self.http.post_json(&url, &request)?;
        let choice = reply.choices.into_iter().next().ok_or_else(|| Error::Protocol {
            url,
            message: "reply has no choices".into(),
        })?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

pub fn chat_classify(client: &ChatClient, prompt: &FilledPrompt, catalog: &LabelCatalog) -> Result<ParsedLabel> {
    let content = prompt.text.replace(MASK_TOKEN, INDEX_INSTRUCTION);
    let reply = client.complete(&content)?;
    Ok(parse_index_response(&reply, catalog.len(), catalog))
}

/// First standalone integer in `0..n_labels`; failing that, the label whose
/// name occurs in the reply (case-insensitive), longest name first.
pub fn parse_index_response(reply: &str, n_labels: usize, catalog: &LabelCatalog) -> ParsedLabel {
    let chars: Vec<char> = reply.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if is_standalone(&chars, start, i) {
            if let Ok(value) = chars[start..i].iter().collect::<String>().parse::<usize>() {
                if value < n_labels {
                    return ParsedLabel::Index(value);
                }
            }
        }
    }

    let lowered = reply.to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    for entry in catalog.entries().iter().filter(|e| e.index < n_labels) {
        let name = entry.name.to_lowercase();
        if lowered.contains(&name) {
            let len = name.chars().count();
            if best.is_none_or(|(_, l)| len > l) {
                best = Some((entry.index, len));
            }
        }
    }
    best.map_or(ParsedLabel::Failure, |(index, _)| ParsedLabel::Index(index))
}

// Not glued to letters, signs or a decimal point.
fn is_standalone(chars: &[char], start: usize, end: usize) -> bool {
    let glued = |c: char| c.is_alphanumeric() || c == '_';
    if start > 0 {
        let prev = chars[start - 1];
        if glued(prev) || prev == '-' || prev == '+' {
            return false;
        }
        if (prev == '.' || prev == ',') && start >= 2 && chars[start - 2].is_ascii_digit() {
            return false;
        }
    }
    if let Some(&next) = chars.get(end) {
        if glued(next) {
            return false;
        }
        if (next == '.' || next == ',') && chars.get(end + 1).is_some_and(|c| c.is_ascii_digit()) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(reply: &str) -> ParsedLabel {
        let catalog = LabelCatalog::retail_default();
        parse_index_response(reply, catalog.len(), &catalog)
    }

    #[test]
    fn bare_and_embedded_integers() {
        assert_eq!(parse("6"), ParsedLabel::Index(6));
        assert_eq!(parse("The answer is: 13."), ParsedLabel::Index(13));
        assert_eq!(parse("label 0 (availability)"), ParsedLabel::Index(0));
        assert_eq!(parse("15 or maybe 4"), ParsedLabel::Index(4));
    }

    #[test]
    fn out_of_range_fails() {
        assert_eq!(parse("15"), ParsedLabel::Failure);
        assert_eq!(parse("99999999999999999999999"), ParsedLabel::Failure);
    }

    #[test]
    fn non_standalone_numbers_skipped() {
        assert_eq!(parse("T5 says 2"), ParsedLabel::Index(2));
        assert_eq!(parse("-3"), ParsedLabel::Failure);
        assert_eq!(parse("3.5 then 7"), ParsedLabel::Index(7));
        assert_eq!(parse("x7y"), ParsedLabel::Failure);
    }

    #[test]
    fn name_fallback() {
        assert_eq!(parse("Order Creation"), ParsedLabel::Index(6));
        assert_eq!(parse("i'd say order creation, clearly"), ParsedLabel::Index(6));
        // "General after Purchase" contains "General"; the longer name wins.
        assert_eq!(parse("General after Purchase"), ParsedLabel::Index(2));
        assert_eq!(parse("no idea"), ParsedLabel::Failure);
        assert_eq!(parse(""), ParsedLabel::Failure);
    }

    #[test]
    fn every_index_round_trips() {
        for i in 0..14 {
            assert_eq!(parse(&i.to_string()), ParsedLabel::Index(i));
        }
    }
}
