use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, TaskKind, TaskSpec};
use crate::Result;

pub const AUDIO_SLOT: &str = "<audio>";
pub const VISUAL_SLOT: &str = "<visual>";
pub const TEXT_SLOT: &str = "<text>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

const INSTRUCTION: &str = "Given the speech, facial expressions and personal profile of the speaker, \
what is the depression level of the speaker?";
const DIRECTIVE: &str = "Reply with exactly one option. Answer:";

/// Multiple-choice prompt: modality slots, an instruction, the options in
/// class order, and a directive ending at the answer slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    pub options: Vec<String>,
    pub directive: String,
}

impl PromptTemplate {
    pub fn new(task: &TaskSpec) -> Self {
        PromptTemplate {
            instruction: INSTRUCTION.to_string(),
            options: task.class_names.clone(),
            directive: DIRECTIVE.to_string(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{AUDIO_SLOT} {VISUAL_SLOT} {TEXT_SLOT} {} Options: {}. {}",
            self.instruction,
            self.options.join(", "),
            self.directive
        )
    }
}

/// Renders the prompt for `task` as declared by `ds`.
pub fn build_prompt(ds: &Dataset, task: TaskKind) -> Result<String> {
    Ok(PromptTemplate::new(ds.task(task)?).render())
}

/// Word-level vocabulary over the template lexicon. Every class name of
/// every task is a single token, so multi-word names occupy one answer slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Lower-cased multi-word option names, longest first.
    phrases: Vec<String>,
}

impl Vocab {
    pub fn build() -> Self {
        let mut tokens: Vec<String> = [BOS, EOS, UNK, AUDIO_SLOT, VISUAL_SLOT, TEXT_SLOT]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut phrases = Vec::new();
        for task in [TaskKind::Binary, TaskKind::Ternary, TaskKind::Quinary] {
            for name in task.class_names() {
                let lower = name.to_lowercase();
                if lower.contains(' ') && !phrases.contains(&lower) {
                    phrases.push(lower.clone());
                }
                tokens.push(lower);
            }
        }
        phrases.sort_by_key(|p| std::cmp::Reverse(p.len()));
        let lexicon = format!("{INSTRUCTION} Options: , . {DIRECTIVE}");
        tokens.extend(split_words(&lexicon, &[]));
        let mut index = HashMap::new();
        let mut unique = Vec::new();
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), unique.len());
                unique.push(t);
            }
        }
        Vocab {
            tokens: unique,
            index,
            phrases,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text, &self.phrases).iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// Token id of each option, in class order.
    pub fn option_ids(&self, options: &[String]) -> Vec<usize> {
        options.iter().map(|o| self.id(&o.to_lowercase())).collect()
    }
}

/// Lower-cases, separates punctuation, and keeps `phrases` as single words.
fn split_words(text: &str, phrases: &[String]) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 16);
    for ch in text.to_lowercase().chars() {
        if ",.?:;!()".contains(ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    let words: Vec<&str> = spaced.split_whitespace().collect();
    let mut out = Vec::with_capacity(words.len());
    let mut i = 0;
    'outer: while i < words.len() {
        for p in phrases {
            let parts: Vec<&str> = p.split(' ').collect();
            if words.len() >= i + parts.len() && words[i..i + parts.len()] == parts[..] {
                out.push(p.clone());
                i += parts.len();
                continue 'outer;
            }
        }
        out.push(words[i].to_string());
        i += 1;
    }
    out
}

/// Maps free text to a class: the option whose name occurs earliest
/// (case-insensitively) wins, the longer name on a tie. Returns `None` when
/// no option occurs.
pub fn decode_answer(text: &str, options: &[String]) -> Option<usize> {
    let lower = text.to_lowercase();
    options
        .iter()
        .enumerate()
        .filter_map(|(c, o)| lower.find(&o.to_lowercase()).map(|pos| (pos, std::cmp::Reverse(o.len()), c)))
        .min()
        .map(|(_, _, c)| c)
}
