use super::Token;

/// Splits text into maximal runs of alphanumeric characters; every other
/// non-whitespace character is a token of its own. Offsets count characters.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let flush = |word: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !word.is_empty() {
            tokens.push(Token { text: std::mem::take(word), start, end });
        }
    };
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if word.is_empty() {
                word_start = pos;
            }
            word.push(ch);
        } else {
            flush(&mut word, word_start, pos, &mut tokens);
            if !ch.is_whitespace() {
                tokens.push(Token { text: ch.to_string(), start: pos, end: pos + 1 });
            }
        }
        pos += 1;
    }
    flush(&mut word, word_start, pos, &mut tokens);
    tokens
}
