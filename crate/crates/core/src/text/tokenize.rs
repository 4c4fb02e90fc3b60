/// A token together with the byte range it came from in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Lowercases, splits on whitespace, and emits every punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

pub fn tokenize_with_offsets(text: &str) -> Vec<TokenSpan> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |out: &mut Vec<TokenSpan>, start: Option<usize>, end: usize| {
        let Some(s) = start else { return };
        let lower = text[s..end].to_lowercase();
        // Lowercasing can introduce combining marks; split those off so that
        // tokenizing the output again is a no-op.
        let mut piece = String::new();
        for c in lower.chars() {
            if is_punct(c) {
                if !piece.is_empty() {
                    out.push(TokenSpan { text: std::mem::take(&mut piece), start: s, end });
                }
                out.push(TokenSpan { text: c.to_string(), start: s, end });
            } else {
                piece.push(c);
            }
        }
        if !piece.is_empty() {
            out.push(TokenSpan { text: piece, start: s, end });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            flush(&mut out, word_start.take(), i);
        } else if is_punct(c) {
            flush(&mut out, word_start.take(), i);
            out.push(TokenSpan {
                text: c.to_string(),
                start: i,
                end: i + c.len_utf8(),
            });
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    flush(&mut out, word_start, text.len());
    out
}

/// Canonical surface form used for matching: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}
