//! Text normalization and tokenization shared by language identification,
//! vocabulary building and the evaluation metrics.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Languages written without word-separating spaces. Their text is always
/// tokenized per character.
const SPACE_FREE_LANGUAGES: &[&str] = &["ja", "zh", "th", "lo", "km", "my"];

/// NFC-normalize and lowercase.
pub fn normalize(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// True for characters of scripts that do not separate words with spaces.
pub fn is_space_free_char(c: char) -> bool {
    matches!(c as u32,
        0x0E00..=0x0EFF      // Thai, Lao
        | 0x1000..=0x109F    // Myanmar
        | 0x1780..=0x17FF    // Khmer
        | 0x3040..=0x30FF    // Hiragana, Katakana
        | 0x31F0..=0x31FF
        | 0x3400..=0x4DBF    // CJK extension A
        | 0x4E00..=0x9FFF    // CJK unified ideographs
        | 0xF900..=0xFAFF
        | 0xFF66..=0xFF9F    // halfwidth katakana
        | 0x20000..=0x2FFFF)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_combining_mark(c)
}

/// Lowercase, NFC-normalize and split on whitespace and punctuation.
///
/// Punctuation and symbols act as boundaries and are dropped. Characters of
/// space-free scripts (and every word character when `language` is a
/// space-free language) become single-character tokens.
pub fn tokenize(text: &str, language: &str) -> Vec<String> {
    let per_char = SPACE_FREE_LANGUAGES.contains(&language);
    let mut tokens = Vec::new();
    let mut current = String::new();
    // Set while the last emitted token is a single character that a
    // following combining mark should attach to.
    let mut after_char_token = false;
    for c in normalize(text).chars() {
        if !is_word_char(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            after_char_token = false;
            continue;
        }
        if is_combining_mark(c) && after_char_token {
            if let Some(last) = tokens.last_mut() {
                last.push(c);
            }
        } else if per_char || is_space_free_char(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
            after_char_token = true;
        } else {
            current.push(c);
            after_char_token = false;
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Whitespace-delimited token count, as used for corpus statistics.
pub fn whitespace_token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_a_boundary() {
        assert_eq!(tokenize("Hello, world!", "en"), vec!["hello", "world"]);
        assert_eq!(tokenize("a.b", "en"), vec!["a", "b"]);
    }

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(tokenize("", "en").is_empty());
        assert!(tokenize("  ?! ", "en").is_empty());
    }

    #[test]
    fn space_free_script_falls_back_to_characters() {
        assert_eq!(tokenize("それな", "ja"), vec!["そ", "れ", "な"]);
        // Script detection works without the language hint.
        assert_eq!(tokenize("それな", "xx"), vec!["そ", "れ", "な"]);
        assert_eq!(tokenize("ok それ", "ja"), vec!["o", "k", "そ", "れ"]);
        assert_eq!(tokenize("ok それ", "en"), vec!["ok", "そ", "れ"]);
    }

    #[test]
    fn nfc_and_lowercase() {
        // "É" as E + combining acute.
        assert_eq!(tokenize("E\u{301}TÉ", "fr"), vec!["été"]);
    }

    #[test]
    fn devanagari_words_stay_whole() {
        assert_eq!(tokenize("नमस्ते दोस्त", "hi"), vec!["नमस्ते", "दोस्त"]);
    }
}
