/// Splits raw post text into lowercase terms.
///
/// Text is lowercased and split on Unicode whitespace. Each piece loses its
/// trailing non-alphanumeric characters and its leading ones, except that a
/// `#` or `@` directly in front of the first alphanumeric character is kept.
/// Pieces that look like URLs are dropped, as are pieces left empty.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .filter_map(clean_token)
        .collect()
}

fn clean_token(raw: &str) -> Option<String> {
    if is_url(raw) {
        return None;
    }
    let end_trimmed = raw.trim_end_matches(|c: char| !c.is_alphanumeric());
    let core_start = end_trimmed.find(|c: char| c.is_alphanumeric())?;
    let mut start = core_start;
    if let Some(prefix) = end_trimmed[..core_start].chars().next_back() {
        if prefix == '#' || prefix == '@' {
            start -= prefix.len_utf8();
        }
    }
    let token = &end_trimmed[start..];
    if is_url(token) {
        return None;
    }
    Some(token.to_string())
}

fn is_url(token: &str) -> bool {
    let lead = token.trim_start_matches(|c: char| !c.is_alphanumeric());
    lead.starts_with("http://") || lead.starts_with("https://")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn strips_punctuation_and_lowercases() {
        assert_eq!(toks("Hello, World!"), vec!["hello", "world"]);
    }

    #[test]
    fn empty_input() {
        assert!(toks("").is_empty());
        assert!(toks("   \t\n").is_empty());
    }

    #[test]
    fn keeps_hashtag_drops_url() {
        assert_eq!(toks("#BBC http://t.co/x"), vec!["#bbc"]);
        assert_eq!(toks("see (https://example.com) now"), vec!["see", "now"]);
    }

    #[test]
    fn mentions_and_bare_symbols() {
        assert_eq!(toks("@Alice: hi ... # @"), vec!["@alice", "hi"]);
        assert_eq!(toks("\"#tag\""), vec!["#tag"]);
        assert_eq!(toks("don't"), vec!["don't"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_joined_output(s in "\\PC{0,60}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn idempotent_on_ascii_posts(s in "[a-zA-Z#@:/.,!()' ]{0,80}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }
    }
}
