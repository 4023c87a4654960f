//! Word tokenization and sentence segmentation.

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Alphanumeric runs in their original case. An apostrophe is kept only when
/// it sits between two alphanumeric characters, and is normalized to `'`.
pub fn tokenize_cased(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.push(c);
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Lowercased word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_cased(text).into_iter().map(|t| t.to_lowercase()).collect()
}

/// Splits on `.`, `!` or `?` followed by whitespace or the end of the text.
/// Segments that are empty after trimming are dropped. No abbreviation handling.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            let boundary = match iter.peek() {
                None => true,
                Some(&(_, n)) => n.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                let seg = text[start..end].trim();
                if !seg.is_empty() {
                    out.push(seg);
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
