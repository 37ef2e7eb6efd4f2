//! Knowledge-enhanced multiple-choice prompts and their ablation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explorer::ExplorationResult;
use crate::kg::EntityId;

pub const TEMPLATE_VERSION: u32 = 1;

const TASK_DESCRIPTION: &str = include_str!("../templates/task_description_v1.txt");

pub const MAX_CANDIDATES: usize = 26;

/// Trimmed task description shared by every variant.
pub fn task_description() -> &'static str {
    TASK_DESCRIPTION.trim_end()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Mcp,
    WoMcp,
    WoCand,
    WoProb,
    WoPath,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Mcp, Variant::WoMcp, Variant::WoCand, Variant::WoProb, Variant::WoPath];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Mcp => "mcp",
            Variant::WoMcp => "wo_mcp",
            Variant::WoCand => "wo_cand",
            Variant::WoProb => "wo_prob",
            Variant::WoPath => "wo_path",
        }
    }

    /// Whether candidates carry letter labels the answer parser can match.
    pub fn has_labels(self) -> bool {
        matches!(self, Variant::Mcp | Variant::WoProb | Variant::WoPath)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown prompt variant `{s}` (expected mcp, wo_mcp, wo_cand, wo_prob or wo_path)")))
    }
}

/// One reference answer as offered to the language model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptCandidate {
    pub entity: EntityId,
    pub name: String,
    pub probability: f64,
    pub facts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub variant: Variant,
    pub task_description: String,
    pub body: String,
    pub candidates: Vec<PromptCandidate>,
}

impl PromptBundle {
    pub fn label(index: usize) -> char {
        (b'A' + index as u8) as char
    }

    /// Task description and body as a single text, one blank line apart.
    pub fn full_text(&self) -> String {
        format!("{}\n\n{}", self.task_description, self.body)
    }
}

/// Top-`n` candidates by probability, ties to the lower entity id.
pub fn select_top_n(result: &ExplorationResult, n: usize) -> Result<Vec<(EntityId, f64)>> {
    if n == 0 {
        return Err(Error::Precondition("N must be at least 1".into()));
    }
    if result.candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut ranked = result.ranked();
    ranked.truncate(n);
    Ok(ranked)
}

/// Half-up rounding to thousandths, printed in the shortest form with at
/// least one decimal: `0.7`, `0.285`, `0.0`, `1.0`.
pub fn format_probability(p: f64) -> String {
    // round on the shortest decimal expansion so 0.0145 goes up, not down
    let repr = format!("{}", p.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.extend((0..3).map(|i| frac.get(i).copied().unwrap_or(0)));
    if frac.get(3).is_some_and(|&d| d >= 5) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 3;
    let int_str: String = digits[..split].iter().map(|d| (b'0' + d) as char).collect();
    let mut frac_str: String = digits[split..].iter().map(|d| (b'0' + d) as char).collect();
    while frac_str.len() > 1 && frac_str.ends_with('0') {
        frac_str.pop();
    }
    let sign = if p.is_sign_negative() && (int_str != "0" || frac_str != "0") {
        "-"
    } else {
        ""
    };
    format!("{sign}{int_str}.{frac_str}")
}

fn fact_group(facts: &[String]) -> String {
    if facts.is_empty() {
        String::new()
    } else {
        format!("  {{relevant facts: {}}}", facts.join(", "))
    }
}

/// Renders the question block for `variant`; a candidate without facts
/// simply has no fact group.
pub fn build_prompt(question: &str, candidates: &[PromptCandidate], variant: Variant) -> Result<PromptBundle> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    if candidates.len() > MAX_CANDIDATES {
        return Err(Error::Precondition(format!(
            "at most {MAX_CANDIDATES} candidates can be labelled, got {}",
            candidates.len()
        )));
    }
    let mut body = format!("Question: {}\n\n", question.trim());
    match variant {
        Variant::Mcp | Variant::WoProb | Variant::WoPath => {
            body.push_str("Reference answers:");
            for (i, c) in candidates.iter().enumerate() {
                body.push('\n');
                body.push_str(&format!("{}. {}", PromptBundle::label(i), c.name));
                if variant != Variant::WoProb {
                    body.push_str(&format!(" (correct probability: {})", format_probability(c.probability)));
                }
                if variant != Variant::WoPath {
                    body.push_str(&fact_group(&c.facts));
                }
            }
        }
        Variant::WoMcp => {
            let names: Vec<&str> = candidates.iter().map(|c| c.name.as_str()).collect();
            let probs: Vec<String> = candidates.iter().map(|c| format_probability(c.probability)).collect();
            let mut facts: Vec<&str> = Vec::new();
            for f in candidates.iter().flat_map(|c| &c.facts) {
                if !facts.contains(&f.as_str()) {
                    facts.push(f);
                }
            }
            body.push_str(&format!("Reference answers include: [{}].\n", names.join(", ")));
            body.push_str(&format!(
                "Their correct probabilities are [{}]. Relevant facts are [{}].",
                probs.join(", "),
                facts.join(", ")
            ));
        }
        Variant::WoCand => {
            body.push_str("Relevant facts include:");
            for c in candidates {
                body.push('\n');
                body.push_str(&format!(
                    "{{{}}}(correct probability: {})",
                    c.facts.join(", "),
                    format_probability(c.probability)
                ));
            }
            body.push('.');
        }
    }
    Ok(PromptBundle {
        variant,
        task_description: task_description().to_owned(),
        body,
        candidates: candidates.to_vec(),
    })
}
