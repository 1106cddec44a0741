//! The closed prompt vocabulary and tokenized conditioning.
//!
//! Prompts are built from a fixed phrase list: a start token, the articles
//! `a` / `and`, eight colors, four shapes, and four spatial relations.
//! Multi-word relations (`left of`, `on top of`) are single tokens. The
//! empty (unconditional) prompt is the start token alone.

use crate::error::{contract, Error, Result};
use serde::{Deserialize, Serialize};

pub const SOT: &str = "<sot>";
pub const SOT_ID: u32 = 0;
/// Upper bound on tokenized prompt length, used to size positional tables.
pub const MAX_TOKENS: usize = 16;

pub const COLORS: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple",
];
pub const SHAPES: [&str; 4] = ["sphere", "cube", "cone", "torus"];
pub const RELATIONS: [&str; 4] = ["left of", "on top of", "beside", "inside"];

const COLOR_BASE: u32 = 3;
const SHAPE_BASE: u32 = COLOR_BASE + COLORS.len() as u32;
const RELATION_BASE: u32 = SHAPE_BASE + SHAPES.len() as u32;

#[derive(Debug, Clone)]
pub struct Vocabulary {
    phrases: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut phrases = vec![SOT.to_string(), "a".to_string(), "and".to_string()];
        phrases.extend(COLORS.iter().map(|s| s.to_string()));
        phrases.extend(SHAPES.iter().map(|s| s.to_string()));
        phrases.extend(RELATIONS.iter().map(|s| s.to_string()));
        Self { phrases }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.phrases
            .get(id as usize)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Contract(format!("token id {id} out of vocabulary")))
    }

    pub fn id_of(&self, phrase: &str) -> Option<u32> {
        self.phrases.iter().position(|p| p == phrase).map(|i| i as u32)
    }

    pub fn color_id(&self, color: &str) -> Result<u32> {
        COLORS
            .iter()
            .position(|c| *c == color)
            .map(|i| COLOR_BASE + i as u32)
            .ok_or_else(|| Error::Contract(format!("unknown color {color:?}")))
    }

    pub fn shape_id(&self, shape: &str) -> Result<u32> {
        SHAPES
            .iter()
            .position(|s| *s == shape)
            .map(|i| SHAPE_BASE + i as u32)
            .ok_or_else(|| Error::Contract(format!("unknown shape {shape:?}")))
    }

    pub fn relation_id(&self, relation: &str) -> Result<u32> {
        RELATIONS
            .iter()
            .position(|r| *r == relation)
            .map(|i| RELATION_BASE + i as u32)
            .ok_or_else(|| Error::Contract(format!("unknown relation {relation:?}")))
    }

    /// Tokenize a prompt, matching the longest phrase at each position. The
    /// start token is prepended and must not appear in the text.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let mut ids = vec![SOT_ID];
        let mut i = 0;
        while i < words.len() {
            let mut matched = None;
            for (id, phrase) in self.phrases.iter().enumerate().skip(1) {
                let parts: Vec<&str> = phrase.split(' ').collect();
                if words[i..].starts_with(&parts[..]) {
                    match matched {
                        Some((_, best)) if best >= parts.len() => {}
                        _ => matched = Some((id as u32, parts.len())),
                    }
                }
            }
            let (id, parts) = matched.ok_or_else(|| {
                Error::Contract(format!("word {:?} not in vocabulary", words[i]))
            })?;
            ids.push(id);
            i += parts;
        }
        if ids.len() > MAX_TOKENS {
            return Err(contract("prompt too long"));
        }
        Ok(ids)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = Vec::new();
        for &id in ids {
            if id == SOT_ID {
                continue;
            }
            out.push(self.word(id)?);
        }
        Ok(out.join(" "))
    }
}

pub fn is_color(id: u32) -> bool {
    (COLOR_BASE..SHAPE_BASE).contains(&id)
}

pub fn is_shape(id: u32) -> bool {
    (SHAPE_BASE..RELATION_BASE).contains(&id)
}

pub fn is_relation(id: u32) -> bool {
    id >= RELATION_BASE && (id as usize) < RELATION_BASE as usize + RELATIONS.len()
}

/// A tokenized prompt plus the token positions to steer: one position per
/// subject, pointing at its shape token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextCondition {
    pub token_ids: Vec<u32>,
    pub subject_indices: Vec<usize>,
}

impl TextCondition {
    pub fn from_ids(token_ids: Vec<u32>, vocab: &Vocabulary) -> Result<Self> {
        if token_ids.first() != Some(&SOT_ID) {
            return Err(contract("token sequence must begin with the start token"));
        }
        if token_ids.len() > MAX_TOKENS {
            return Err(contract("token sequence too long"));
        }
        for &id in &token_ids {
            vocab.word(id)?;
        }
        let subject_indices = token_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| is_shape(**id))
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            token_ids,
            subject_indices,
        })
    }

    pub fn from_text(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let ids = vocab.encode(text)?;
        Self::from_ids(ids, vocab)
    }

    /// The empty prompt used for classifier-free guidance.
    pub fn uncond() -> Self {
        Self {
            token_ids: vec![SOT_ID],
            subject_indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_indices.len()
    }
}
