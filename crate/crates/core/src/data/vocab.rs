use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::nn::{PAD_ID, UNK_ID};

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

/// Dense string-to-id map. Ids follow first-insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn empty() -> Self {
        Vocab::from(Vec::new())
    }

    /// A vocabulary whose ids 0 and 1 are the unknown and padding tokens.
    pub fn with_specials() -> Self {
        let mut v = Vocab::empty();
        v.insert(UNK_TOKEN);
        v.insert(PAD_TOKEN);
        debug_assert_eq!(v.id(UNK_TOKEN), Some(UNK_ID));
        debug_assert_eq!(v.id(PAD_TOKEN), Some(PAD_ID));
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_and_dense_ids() {
        let mut v = Vocab::with_specials();
        assert_eq!(v.insert("the"), 2);
        assert_eq!(v.insert("cat"), 3);
        assert_eq!(v.insert("the"), 2);
        assert_eq!(v.id_or_unk("dog"), UNK_ID);
        assert_eq!(v.token(3), Some("cat"));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }
}
