use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b[a-z][a-z0-9+.\-]*://\S*").expect("valid URL pattern"));

/// Removes scheme-prefixed URLs (`https://…`, `ftp://…`) from raw text.
pub fn strip_urls(raw: &str) -> String {
    URL.replace_all(raw, " ").into_owned()
}

/// URL removal followed by whitespace tokenisation.
pub fn preprocess_text(raw: &str) -> Vec<String> {
    strip_urls(raw).split_whitespace().map(str::to_string).collect()
}

/// Whether a token is itself a URL; used to drop URL tokens from
/// pre-tokenised corpora.
pub fn is_url(token: &str) -> bool {
    URL.find(token).is_some_and(|m| m.start() == 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn removes_urls() {
        assert_eq!(preprocess_text("see https://t.co/x now"), ["see", "now"]);
        assert_eq!(preprocess_text("HTTP://EXAMPLE.com/a?b=c end"), ["end"]);
        assert!(preprocess_text("").is_empty());
        assert_eq!(preprocess_text("no links here"), ["no", "links", "here"]);
        assert!(is_url("http://x.y"));
        assert!(!is_url("http"));
    }
}
