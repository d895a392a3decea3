//! Small text utilities shared by retrieval, validation, and the test oracles.

/// Lowercases, drops punctuation, and splits on whitespace.
///
/// Punctuation is removed rather than treated as a separator, so
/// `claimant's` becomes `claimants` and `8-73-108` becomes `873108`.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Collapses every run of whitespace to a single space and trims the ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `needle` occurs in `haystack` after whitespace normalization.
/// An empty needle never matches.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize_ws(needle);
    !needle.is_empty() && normalize_ws(haystack).contains(&needle)
}

/// Splits prose into sentences ending in `.`, `?` or `!`. Each returned slice
/// is a verbatim substring of the input.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, ch) in text.char_indices() {
        if matches!(ch, '.' | '?' | '!') {
            let end = i + ch.len_utf8();
            let at_boundary = end == bytes.len() || text[end..].starts_with(char::is_whitespace);
            if at_boundary {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s);
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Lowercase word tokens split on any non-alphanumeric character.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("The Claimant's test, C.R.S. 8-73-108!"),
            vec!["the", "claimants", "test", "crs", "873108"]
        );
        assert_eq!(tokenize("ÉLAN Über"), vec!["élan", "über"]);
        assert!(tokenize(" ,.; ").is_empty());
    }

    #[test]
    fn sentences_are_substrings() {
        let text = "He quit. The lift was broken!  Is he eligible? trailing";
        let got = sentences(text);
        assert_eq!(got, vec!["He quit.", "The lift was broken!", "Is he eligible?", "trailing"]);
        for s in got {
            assert!(text.contains(s));
        }
    }

    #[test]
    fn normalized_containment() {
        assert!(contains_normalized("a  b\n c", "b c"));
        assert!(!contains_normalized("abc", ""));
        assert!(!contains_normalized("abc", "   "));
    }
}
