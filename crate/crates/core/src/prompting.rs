//! Prompt templates and rendering.
//!
//! A template spec is plain text with exactly one `{conversation}` and one
//! `{mask}` placeholder. Rendering substitutes the record text and the
//! `<MASK>` marker; backends translate the marker into whatever their model
//! expects.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConversationRecord, LabelCatalog};
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "<MASK>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Conversation,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilledPrompt {
    pub text: String,
    pub template_id: String,
    pub record_id: String,
    pub truncated: bool,
}

/// Template file entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub id: String,
    pub spec: String,
}

pub fn parse_template(id: &str, spec: &str) -> Result<Template> {
    let invalid = |message: String| Error::InvalidTemplate {
        id: id.to_string(),
        message,
    };
    if spec.is_empty() {
        return Err(invalid("empty spec".into()));
    }

    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = spec;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let name_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        // `{` not followed by `name}` is literal text.
        if name_len == 0 || !after[name_len..].starts_with('}') {
            literal.push_str(&rest[..=open]);
            rest = after;
            continue;
        }
        literal.push_str(&rest[..open]);
        let segment = match &after[..name_len] {
            "conversation" => Segment::Conversation,
            "mask" => Segment::Mask,
            other => return Err(invalid(format!("unknown placeholder `{{{other}}}`"))),
        };
        if !literal.is_empty() {
            segments.push(Segment::Literal(std::mem::take(&mut literal)));
        }
        segments.push(segment);
        rest = &after[name_len + 1..];
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }

    for (slot, name) in [(Segment::Conversation, "conversation"), (Segment::Mask, "mask")] {
        match segments.iter().filter(|s| **s == slot).count() {
            1 => {}
            0 => return Err(invalid(format!("missing `{{{name}}}` placeholder"))),
            n => return Err(invalid(format!("{n} `{{{name}}}` placeholders, expected exactly one"))),
        }
    }
    Ok(Template {
        id: id.to_string(),
        segments,
    })
}

impl Template {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The spec text this template was parsed from.
    pub fn spec(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => text.as_str(),
                Segment::Conversation => "{conversation}",
                Segment::Mask => "{mask}",
            })
            .collect()
    }

    /// Characters taken by literals and the mask marker.
    pub fn fixed_len(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Literal(text) => text.chars().count(),
                Segment::Conversation => 0,
                Segment::Mask => MASK_TOKEN.chars().count(),
            })
            .sum()
    }

    fn fill(&self, conversation: &str) -> String {
        let mut out = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Conversation => out.push_str(conversation),
                Segment::Mask => out.push_str(MASK_TOKEN),
            }
        }
        out
    }
}

/// Renders `record` through `template`. With a character budget, the
/// conversation loses characters from its start until the prompt fits.
pub fn render_prompt(
    template: &Template,
    record: &ConversationRecord,
    max_chars: Option<usize>,
) -> Result<FilledPrompt> {
    let mut conversation = record.text.as_str();
    let mut truncated = false;
    if let Some(max_chars) = max_chars {
        let fixed = template.fixed_len();
        if max_chars <= fixed {
            return Err(Error::BudgetTooSmall {
                template: template.id.clone(),
                needed: fixed + 1,
                max_chars,
            });
        }
        let budget = max_chars - fixed;
        let len = conversation.chars().count();
        if len > budget {
            let (cut, _) = conversation.char_indices().nth(len - budget).expect("cut inside text");
            conversation = &conversation[cut..];
            truncated = true;
        }
    }
    Ok(FilledPrompt {
        text: template.fill(conversation),
        template_id: template.id.clone(),
        record_id: record.id.clone(),
        truncated,
    })
}

/// The four few-shot templates, ids `1` to `4`.
pub fn default_templates() -> Vec<Template> {
    [
        ("1", "{conversation} Classify this conversation : {mask}"),
        ("2", "{conversation} What is the topic of this conversation ? {mask}"),
        ("3", "{conversation} What is the intent of the customer ? {mask}"),
        ("4", "{conversation} We will be happy to help you with your {mask}."),
    ]
    .into_iter()
    .map(|(id, spec)| parse_template(id, spec).expect("built-in template is valid"))
    .collect()
}

/// Detailed zero-shot template listing every label with its description.
pub fn detailed_template(id: &str, catalog: &LabelCatalog) -> Result<Template> {
    let n = catalog.len();
    let mut spec = format!("{{conversation}}\nGiven this conversation, we have {n} classes:\n");
    for entry in catalog.entries() {
        if entry.description.is_empty() {
            spec.push_str(&format!("{};\n", entry.name));
        } else {
            spec.push_str(&format!("{}: {};\n", entry.name, entry.description));
        }
    }
    spec.push_str(&format!(
        "Please classify this conversation into one class out of these {n} classes: {{mask}}"
    ));
    parse_template(id, &spec)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<Template>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specs: Vec<TemplateSpec> = serde_json::from_str(&raw).map_err(|e| Error::MalformedFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut templates: Vec<Template> = Vec::with_capacity(specs.len());
    for spec in specs {
        if templates.iter().any(|t| t.id == spec.id) {
            return Err(Error::DuplicateId(spec.id));
        }
        templates.push(parse_template(&spec.id, &spec.spec)?);
    }
    Ok(templates)
}
