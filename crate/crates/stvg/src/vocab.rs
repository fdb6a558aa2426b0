//! Closed vocabulary over the synthetic query grammar.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Token-to-id map. Id 0 is PAD, id 1 is UNK; unknown tokens map to UNK.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabJson {
    tokens: Vec<String>,
    pad_id: usize,
    unk_id: usize,
}

impl Vocabulary {
    pub fn new(words: &[&str]) -> Vocabulary {
        let mut tokens: Vec<String> = vec!["<pad>".into(), "<unk>".into()];
        for w in words {
            let w = w.to_lowercase();
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }

    /// The vocabulary of the moving-shapes query grammar.
    pub fn synthetic() -> Vocabulary {
        Vocabulary::new(&[
            "the", "red", "green", "blue", "yellow", "square", "circle", "triangle", "moving",
            "left", "right", "up", "down", "still",
        ])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        *self.ids.get(token).unwrap_or(&UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Lowercase + whitespace tokenization. Unknown tokens become UNK; an
    /// empty query is an error.
    pub fn encode(&self, query: &str) -> Result<Vec<usize>> {
        let ids: Vec<usize> =
            query.split_whitespace().map(|w| self.id(&w.to_lowercase())).collect();
        if ids.is_empty() {
            return Err(Error::Data("empty query after tokenization".into()));
        }
        Ok(ids)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&VocabJson {
            tokens: self.tokens.clone(),
            pad_id: PAD_ID,
            unk_id: UNK_ID,
        })
        .expect("vocabulary serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Vocabulary> {
        let parsed: VocabJson =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("bad vocabulary: {e}")))?;
        if parsed.pad_id != PAD_ID || parsed.unk_id != UNK_ID {
            return Err(Error::Format(format!(
                "vocabulary reserves id 0 for PAD and 1 for UNK, got {} and {}",
                parsed.pad_id, parsed.unk_id
            )));
        }
        let ids = parsed.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocabulary { tokens: parsed.tokens, ids })
    }
}
