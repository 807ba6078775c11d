//! Generation-side types: the autoformalization prompt, sampled candidates,
//! and Lean block extraction from raw model output.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub n: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RequestError {
    ZeroSamples,
    /// Greedy decoding is deterministic; asking for several samples at
    /// temperature 0 would just repeat one.
    GreedyMultiSample { n: u32 },
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RequestError::ZeroSamples => f.write_str("n must be >= 1"),
            RequestError::GreedyMultiSample { n } => {
                write!(f, "temperature 0 requires n = 1, got n = {n}")
            }
        }
    }
}

impl core::error::Error for RequestError {}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), RequestError> {
        if self.n == 0 {
            return Err(RequestError::ZeroSamples);
        }
        if self.temperature == 0.0 && self.n != 1 {
            return Err(RequestError::GreedyMultiSample { n: self.n });
        }
        Ok(())
    }
}

/// One sampled formalization. `negative` marks candidates with no usable
/// Lean output (empty after extraction, or padding for an under-delivering
/// backend).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub instance_id: String,
    pub text: String,
    pub gen_logprob: Option<f64>,
    #[serde(default)]
    pub negative: bool,
}

impl Candidate {
    pub fn negative(candidate_id: String, instance_id: String) -> Self {
        Candidate {
            candidate_id,
            instance_id,
            text: String::new(),
            gen_logprob: None,
            negative: true,
        }
    }
}

/// Instruction template for autoformalization. `{statement}` receives the
/// natural-language question, `{proof}` the natural-language answer.
pub const AUTOFORMALIZATION_PROMPT_TEMPLATE: &str = "Statement and proof in natural language:\n\n# Statement:\n{statement}\n\n# Proof:\n{proof}\n\nTranslate the statement and proof in natural language to lean4:\n";

pub fn build_autoformalization_prompt(question: &str, answer: &str) -> String {
    AUTOFORMALIZATION_PROMPT_TEMPLATE
        .replace("{statement}", question)
        .replace("{proof}", answer)
}

const FENCE: &str = "```";

fn is_lean_starter_line(line: &str) -> bool {
    let t = line.trim_start();
    if t.starts_with("@[") || t.starts_with("--") || t.starts_with("/-") || t.starts_with("#align")
    {
        return true;
    }
    const STARTERS: [&str; 24] = [
        "import",
        "open",
        "namespace",
        "section",
        "end",
        "theorem",
        "lemma",
        "example",
        "def",
        "abbrev",
        "instance",
        "structure",
        "inductive",
        "class",
        "variable",
        "set_option",
        "universe",
        "noncomputable",
        "axiom",
        "attribute",
        "macro",
        "syntax",
        "notation",
        "mutual",
    ];
    let word_end = t
        .char_indices()
        .find(|&(_, c)| !(c.is_alphanumeric() || c == '_'))
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    STARTERS.contains(&&t[..word_end])
}

fn from_first_starter(text: &str) -> Option<String> {
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        if is_lean_starter_line(line) {
            return Some(text[offset..].trim().to_string());
        }
        offset += line.len();
    }
    None
}

struct FencedBlock<'a> {
    tag: String,
    content: &'a str,
}

fn fenced_blocks(raw: &str) -> Vec<FencedBlock<'_>> {
    let mut blocks = Vec::new();
    let mut open_tag: Option<String> = None;
    let mut content_start = 0usize;
    let mut offset = 0usize;
    for line in raw.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with(FENCE) {
            match open_tag.take() {
                None => {
                    open_tag = Some(trimmed[FENCE.len()..].trim().to_lowercase());
                    content_start = offset + line.len();
                }
                Some(tag) => {
                    blocks.push(FencedBlock {
                        tag,
                        content: &raw[content_start..offset],
                    });
                }
            }
        }
        offset += line.len();
    }
    // An unterminated fence still counts: take everything to the end.
    if let Some(tag) = open_tag {
        blocks.push(FencedBlock {
            tag,
            content: &raw[content_start.min(raw.len())..],
        });
    }
    blocks
}

/// Pull the Lean 4 payload out of a raw model response.
///
/// Preference order: the first fenced block tagged `lean`/`lean4`, then the
/// first fenced block of any tag that contains Lean-looking lines, then —
/// with no fences at all — the text itself when it already starts with Lean,
/// or the suffix from the first `theorem`/`lemma`/`import` line. An empty
/// result marks the candidate negative. Idempotent: extracting an already
/// extracted block returns it unchanged.
pub fn extract_lean_block(raw: &str) -> String {
    let blocks = fenced_blocks(raw);
    if let Some(block) = blocks
        .iter()
        .find(|b| b.tag == "lean" || b.tag == "lean4")
        .and_then(|b| from_first_starter(b.content))
    {
        return block;
    }
    if let Some(block) = blocks.iter().find_map(|b| from_first_starter(b.content)) {
        return block;
    }
    if !blocks.is_empty() {
        return String::new();
    }
    // No fences: already-Lean text passes through whole.
    if raw
        .lines()
        .find(|l| !l.trim().is_empty())
        .map(is_lean_starter_line)
        .unwrap_or(false)
    {
        return raw.trim().to_string();
    }
    // Otherwise the longest region starting at a theorem/lemma/import line.
    let mut offset = 0usize;
    for line in raw.split_inclusive('\n') {
        let t = line.trim_start();
        if t.starts_with("theorem") || t.starts_with("lemma") || t.starts_with("import") {
            return raw[offset..].trim().to_string();
        }
        offset += line.len();
    }
    String::new()
}
