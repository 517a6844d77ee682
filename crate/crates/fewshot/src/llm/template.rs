//! Prompt construction from a configurable template.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TemplateError {
    #[error("demo_format must contain {{question}} and {{answer}} exactly once")]
    BadDemoFormat,
    #[error("query_format must contain {{question}} exactly once and no {{answer}}")]
    BadQueryFormat,
    #[error("rendered query prompt is not a prefix of the rendered demonstration")]
    QueryNotPrefixOfDemo,
}

/// Template for rendering demonstrations and the final query into a
/// prompt. Demonstrations render through `demo_format`, are joined with
/// `demo_separator`, and the query renders through `query_format` at the
/// end. An optional header leads the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub demo_format: String,
    pub demo_separator: String,
    pub query_format: String,
    pub header: Option<String>,
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    haystack.match_indices(needle).count()
}

impl PromptTemplate {
    pub fn new(
        demo_format: impl Into<String>,
        demo_separator: impl Into<String>,
        query_format: impl Into<String>,
        header: Option<String>,
    ) -> Result<Self, TemplateError> {
        let t = Self {
            demo_format: demo_format.into(),
            demo_separator: demo_separator.into(),
            query_format: query_format.into(),
            header,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if count_occurrences(&self.demo_format, "{question}") != 1
            || count_occurrences(&self.demo_format, "{answer}") != 1
        {
            return Err(TemplateError::BadDemoFormat);
        }
        if count_occurrences(&self.query_format, "{question}") != 1
            || count_occurrences(&self.query_format, "{answer}") != 0
        {
            return Err(TemplateError::BadQueryFormat);
        }
        Ok(())
    }

    pub fn render_demo(&self, question: &str, answer: &str) -> String {
        self.demo_format
            .replace("{question}", question)
            .replace("{answer}", answer)
    }

    pub fn render_query(&self, question: &str) -> String {
        self.query_format.replace("{question}", question)
    }

    /// The text a backend scores as the model's completion for (question,
    /// answer): the rendered demonstration minus its rendered query-prompt
    /// prefix. With the default template this is `" {answer}"`.
    pub fn completion_target(&self, question: &str, answer: &str) -> Result<String, TemplateError> {
        let demo = self.render_demo(question, answer);
        let query = self.render_query(question);
        demo.strip_prefix(&query)
            .map(str::to_string)
            .ok_or(TemplateError::QueryNotPrefixOfDemo)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            demo_format: "Q: {question}\nA: {answer}".into(),
            demo_separator: "\n\n".into(),
            query_format: "Q: {question}\nA:".into(),
            header: None,
        }
    }
}

/// Render a full prompt: header (if any), demonstrations in the order
/// given, then the query prompt, all joined by the demo separator.
pub fn format_prompt<'a>(
    template: &PromptTemplate,
    context: impl IntoIterator<Item = (&'a str, &'a str)>,
    query: &str,
) -> String {
    let mut segments: Vec<String> = Vec::new();
    if let Some(h) = &template.header {
        segments.push(h.clone());
    }
    for (q, a) in context {
        segments.push(template.render_demo(q, a));
    }
    segments.push(template.render_query(query));
    segments.join(&template.demo_separator)
}
