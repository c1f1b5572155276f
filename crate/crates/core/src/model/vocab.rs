//! Whitespace tokenizer with lowercase normalization; stands in for a
//! subword tokenizer at desk scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
/// Sentinel tokens for span corruption during pretraining.
pub const SENTINELS: [u32; 4] = [3, 4, 5, 6];
const SPECIAL_TOKENS: [&str; 7] = ["<pad>", "</s>", "<unk>", "<x0>", "<x1>", "<x2>", "<x3>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from corpus texts in first-seen order, capped at `cap` entries
    /// (specials included). Tokens beyond the cap fall back to `<unk>`.
    pub fn build<'a, I>(texts: I, cap: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut index: BTreeMap<String, u32> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let cap = cap.max(tokens.len());
        'outer: for text in texts {
            for token in tokenize(text) {
                if index.contains_key(&token) {
                    continue;
                }
                if tokens.len() >= cap {
                    break 'outer;
                }
                index.insert(token.clone(), tokens.len() as u32);
                tokens.push(token);
            }
        }
        Vocabulary { tokens, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Encode text; unknown tokens map to `<unk>`, and `</s>` terminates the
    /// sequence when `append_eos` is set.
    pub fn encode(&self, text: &str, append_eos: bool) -> Vec<u32> {
        let mut ids: Vec<u32> = tokenize(text).map(|t| self.id(&t)).collect();
        if append_eos {
            ids.push(EOS);
        }
        ids
    }

    /// Decode ids to text, skipping specials and stopping at `</s>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut words = Vec::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if (id as usize) < SPECIAL_TOKENS.len() {
                continue;
            }
            if let Some(token) = self.token(id) {
                words.push(token);
            }
        }
        words.join(" ")
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}
