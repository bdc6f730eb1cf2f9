use crate::trajectory::Tokenizer;

/// Default chunk size for page summarization, in tokens.
pub const DEFAULT_CHUNK_TOKENS: usize = 100_000;

/// Greedy left-to-right split into chunks of at most `limit` tokens.
///
/// Whitespace between tokens stays with the preceding chunk, so the chunks
/// concatenate back to `text`. Empty text yields no chunks.
pub fn chunk_content(text: &str, limit: usize, tokenizer: &dyn Tokenizer) -> Vec<String> {
    assert!(limit > 0, "chunk limit must be positive");
    if text.is_empty() {
        return Vec::new();
    }
    let ranges = tokenizer.token_ranges(text);
    let mut chunks = Vec::with_capacity(ranges.len() / limit + 1);
    let mut start = 0;
    for boundary in ranges.iter().skip(limit).step_by(limit) {
        chunks.push(text[start..boundary.start].to_string());
        start = boundary.start;
    }
    chunks.push(text[start..].to_string());
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::WhitespaceTokenizer;
    use proptest::prelude::*;

    #[test]
    fn empty_text_has_no_chunks() {
        assert!(chunk_content("", 3, &WhitespaceTokenizer).is_empty());
    }

    #[test]
    fn exact_limit_is_one_chunk() {
        assert_eq!(chunk_content("a b c", 3, &WhitespaceTokenizer), vec!["a b c"]);
    }

    #[test]
    fn splits_greedily() {
        let chunks = chunk_content(" a b c d e ", 2, &WhitespaceTokenizer);
        assert_eq!(chunks, vec![" a b ", "c d ", "e "]);
    }

    #[test]
    fn chunk_count_is_ceiling_division() {
        // ceil(25 / 10) = 3 with sizes 10, 10, 5.
        let text = vec!["tok"; 25].join(" ");
        let chunks = chunk_content(&text, 10, &WhitespaceTokenizer);
        let sizes: Vec<usize> = chunks.iter().map(|c| WhitespaceTokenizer.count(c)).collect();
        assert_eq!(sizes, vec![10, 10, 5]);
    }

    proptest! {
        #[test]
        fn chunks_reassemble_and_respect_limit(text in "[a-z \\n]{0,200}", limit in 1usize..20) {
            let chunks = chunk_content(&text, limit, &WhitespaceTokenizer);
            prop_assert_eq!(chunks.concat(), text.clone());
            for c in &chunks {
                prop_assert!(WhitespaceTokenizer.count(c) <= limit);
            }
            let n = WhitespaceTokenizer.count(&text);
            if n > 0 {
                prop_assert_eq!(chunks.len(), n.div_ceil(limit));
            }
        }
    }
}
