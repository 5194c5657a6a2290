//! Rule-based tokenizer: lowercase, whitespace split, leading/trailing
//! punctuation peeled into their own tokens. Numbers keep internal dots
//! ("3.5"), and a trailing period directly after a letter stays attached
//! ("no.", abbreviation rule). Idempotent on its own space-joined output.

/// Lowercase and collapse all whitespace runs to single spaces.
pub fn normalize_ws(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.to_lowercase().split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();

        while lo < hi && is_punct(chars[lo]) {
            out.push(chars[lo].to_string());
            lo += 1;
        }

        let mut tail: Vec<String> = Vec::new();
        // loop body only runs with hi - 1 > lo, so chars[hi - 2] is in range
        while hi > lo && is_punct(chars[hi - 1]) {
            // abbreviation rule: keep "xyz." together
            if chars[hi - 1] == '.' && chars[hi - 2].is_alphabetic() {
                break;
            }
            tail.push(chars[hi - 1].to_string());
            hi -= 1;
        }

        if lo < hi {
            out.push(chars[lo..hi].iter().collect());
        }
        out.extend(tail.into_iter().rev());
    }
    out
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}
