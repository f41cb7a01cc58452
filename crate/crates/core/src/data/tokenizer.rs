/// Punctuation marks emitted as standalone tokens.
pub const PUNCTUATION: [char; 10] = ['.', ',', '?', '!', '\'', '"', '(', ')', ':', ';'];

/// Lowercases, splits on whitespace and detaches punctuation marks.
///
/// ```
/// use mhqg::data::tokenize;
/// assert_eq!(tokenize("Women's magazines?"), ["women", "'", "s", "magazines", "?"]);
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Joins tokens with single spaces; re-tokenizing the result is lossless.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| t.as_ref())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn magazine_question() {
        assert_eq!(
            tokenize("Are Jane and First for Women both women's magazines?"),
            [
                "are", "jane", "and", "first", "for", "women", "both", "women", "'", "s",
                "magazines", "?"
            ]
        );
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
        assert_eq!(tokenize("(a):b;"), ["(", "a", ")", ":", "b", ";"]);
    }

    proptest! {
        #[test]
        fn retokenizing_detokenized_output_is_stable(text in "[A-Za-z .,?!'\"():;\t]{0,60}") {
            let once = tokenize(&text);
            prop_assert_eq!(tokenize(&detokenize(&once)), once);
        }
    }
}
