use std::collections::HashMap;

/// Token <-> index table. Special tokens occupy the first indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocab {
    /// Builds a vocabulary from token streams. Specials come first in the
    /// given order; the rest are ordered by frequency (descending) then token,
    /// keeping those seen at least `min_count` times, up to `max_size` total.
    pub fn build<'a, I>(
        sequences: I,
        specials: &[&str],
        unk: &str,
        min_count: usize,
        max_size: Option<usize>,
    ) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_str()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !specials.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(tokens.len()));
        tokens.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens, unk).expect("unk is among the specials")
    }

    /// Rebuilds from an ordered token list. Returns `None` if `unk` is
    /// missing or a token repeats.
    pub fn from_tokens(tokens: Vec<String>, unk: &str) -> Option<Self> {
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return None;
        }
        let unk = *index.get(unk)?;
        Some(Vocab { tokens, index, unk })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the UNK index.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}
