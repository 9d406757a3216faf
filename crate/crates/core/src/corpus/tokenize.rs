/// Lowercases and splits on whitespace; every punctuation character becomes
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_ascii()) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_lowercase().collect());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Non-overlapping, left-to-right, case-insensitive matches of the
/// (possibly multi-word) `entity` in `tokens`, as inclusive offsets.
pub fn find_entity_mentions(tokens: &[String], entity: &str) -> Vec<(usize, usize)> {
    let needle = tokenize(entity);
    let k = needle.len();
    let mut out = Vec::new();
    if k == 0 || k > tokens.len() {
        return out;
    }
    let mut i = 0;
    while i + k <= tokens.len() {
        let hit = tokens[i..i + k]
            .iter()
            .zip(&needle)
            .all(|(t, n)| t.to_lowercase() == *n);
        if hit {
            out.push((i, i + k - 1));
            i += k;
        } else {
            i += 1;
        }
    }
    out
}
