use unicode_normalization::UnicodeNormalization;

use crate::error::Result;

/// NFC-normalize, lowercase, isolate punctuation and split on whitespace.
pub fn normalize(text: &[u8]) -> Result<Vec<String>> {
    let s = std::str::from_utf8(text)?;
    Ok(normalize_str(s))
}

pub fn normalize_str(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.nfc().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_punct(ch) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_punct(ch: char) -> bool {
    ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_whitespace() && !ch.is_control())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules() {
        assert_eq!(normalize(b"A dog runs.").unwrap(), ["a", "dog", "runs", "."]);
        assert!(normalize(b"").unwrap().is_empty());
        assert_eq!(normalize(b"Hello,  world").unwrap(), ["hello", ",", "world"]);
        assert_eq!(normalize_str("  Über\tALLES!! "), ["über", "alles", "!", "!"]);
    }

    #[test]
    fn nfc_composes() {
        // "e" + combining acute accent
        assert_eq!(normalize_str("Cafe\u{301}"), ["caf\u{e9}"]);
    }

    #[test]
    fn invalid_utf8() {
        assert!(matches!(
            normalize(&[0x61, 0xff, 0x62]),
            Err(crate::Error::Encoding(_))
        ));
    }
}
