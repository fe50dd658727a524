//! Text utilities shared by retrieval, metrics, and response parsing:
//! tokenization (with CJK handling), answer normalization and a tolerant
//! first-JSON-object extractor for model output.

/// True for characters we treat as CJK: Han ideographs (including extension A
/// and compatibility blocks) plus hiragana/katakana. Scripts without
/// whitespace word boundaries, so word tokenization does not apply.
pub fn is_cjk(c: char) -> bool {
    matches!(c,
        '\u{3040}'..='\u{30FF}'   // hiragana, katakana
        | '\u{3400}'..='\u{4DBF}' // CJK ext A
        | '\u{4E00}'..='\u{9FFF}' // CJK unified
        | '\u{F900}'..='\u{FAFF}' // CJK compatibility
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Seg {
    Word(usize),
    Cjk(usize),
}

/// Splits text into lowercase alphanumeric runs and CJK runs, dropping
/// punctuation and whitespace. Shared base for both tokenizers below.
fn segments(text: &str) -> Vec<(Seg, usize)> {
    let mut out = Vec::new();
    let mut start: Option<Seg> = None;
    for (i, c) in text.char_indices() {
        let kind = if is_cjk(c) {
            Some(true)
        } else if c.is_alphanumeric() {
            Some(false)
        } else {
            None
        };
        match (start, kind) {
            (None, Some(true)) => start = Some(Seg::Cjk(i)),
            (None, Some(false)) => start = Some(Seg::Word(i)),
            (Some(Seg::Word(s)), Some(true)) => {
                out.push((Seg::Word(s), i));
                start = Some(Seg::Cjk(i));
            }
            (Some(Seg::Cjk(s)), Some(false)) => {
                out.push((Seg::Cjk(s), i));
                start = Some(Seg::Word(i));
            }
            (Some(seg), None) => {
                out.push((seg, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(seg) = start {
        out.push((seg, text.len()));
    }
    out
}

/// Metric tokenization: lowercase word tokens, punctuation stripped, CJK
/// runs emitted as single characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for (seg, end) in segments(text) {
        match seg {
            Seg::Word(s) => tokens.push(text[s..end].to_lowercase()),
            Seg::Cjk(s) => tokens.extend(text[s..end].chars().map(String::from)),
        }
    }
    tokens
}

/// Retrieval tokenization: like [`tokenize`] but CJK runs become character
/// bigrams (a lone CJK character stays a unigram), which gives BM25 usable
/// term statistics on unsegmented text.
pub fn tokenize_for_index(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for (seg, end) in segments(text) {
        match seg {
            Seg::Word(s) => tokens.push(text[s..end].to_lowercase()),
            Seg::Cjk(s) => {
                let chars: Vec<char> = text[s..end].chars().collect();
                if chars.len() == 1 {
                    tokens.push(chars[0].to_string());
                } else {
                    for w in chars.windows(2) {
                        tokens.push(w.iter().collect());
                    }
                }
            }
        }
    }
    tokens
}

/// Canonical form for exact-match comparison: lowercased, punctuation
/// dropped, whitespace collapsed to single spaces.
pub fn normalize_answer(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Extracts the first balanced top-level JSON object from `raw`, tolerating
/// markdown fences, prose before/after, and nested braces inside strings.
/// Returns `None` when no balanced object exists.
pub fn extract_first_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Ceil(chars / chars_per_token), the fallback token estimate when a gateway
/// has no tokenizer. Empty text is zero tokens.
pub fn estimate_tokens(text: &str, chars_per_token: usize) -> usize {
    let chars = text.chars().count();
    chars.div_ceil(chars_per_token.max(1))
}
