use std::sync::OnceLock;

use regex::Regex;

use crate::data::Dataset;

struct Patterns {
    link: Regex,
    user: Regex,
    hashtag: Regex,
    space: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        link: Regex::new(r"(?:https?://|www\.)\S*").unwrap(),
        user: Regex::new(r"@[A-Za-z0-9_]+").unwrap(),
        hashtag: Regex::new(r"#\S+").unwrap(),
        space: Regex::new(r"\s+").unwrap(),
    })
}

/// Removes hyperlinks, then usernames, then hashtags, and normalizes
/// whitespace. Removed spans become a space so that text on either side of
/// a removal never fuses into a new match.
pub fn clean_tweet(text: &str) -> String {
    let p = patterns();
    let s = p.link.replace_all(text, " ");
    let s = p.user.replace_all(&s, " ");
    let s = p.hashtag.replace_all(&s, " ");
    p.space.replace_all(&s, " ").trim().to_string()
}

/// Drops every example for which `is_english` holds, preserving order.
pub fn filter_english(dataset: Dataset, is_english: impl Fn(&str) -> bool) -> Dataset {
    dataset.retain(|e| !is_english(&e.text))
}

const STOPWORDS: [&str; 5] = ["the", "and", "you", "for", "that"];

/// Stop-word heuristic: English if at least 2 of every 10 tokens are among
/// "the", "and", "you", "for", "that" (case-insensitive, punctuation ignored).
pub fn looks_english(text: &str) -> bool {
    let mut tokens = 0usize;
    let mut hits = 0usize;
    for tok in text.split_whitespace() {
        tokens += 1;
        let word: String = tok
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        if STOPWORDS.contains(&word.as_str()) {
            hits += 1;
        }
    }
    hits > 0 && hits * 10 >= tokens * 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use proptest::prelude::*;

    #[test]
    fn strips_links_users_hashtags() {
        assert_eq!(clean_tweet("RT @user check https://t.co/x #nlp sada"), "RT check sada");
        assert_eq!(clean_tweet("see www.example.com/a?b=c now"), "see now");
        assert_eq!(clean_tweet("http://a.b"), "");
        assert_eq!(clean_tweet("#a #b #c"), "");
    }

    #[test]
    fn plain_text_only_whitespace_normalized() {
        assert_eq!(clean_tweet("  Dobar   dan,\tkako si?  "), "Dobar dan, kako si?");
        assert_eq!(clean_tweet("email me at a@ b"), "email me at a@ b");
    }

    #[test]
    fn removal_does_not_fuse_fragments() {
        let once = clean_tweet("http@a://x.y");
        assert_eq!(clean_tweet(&once), once);
    }

    proptest! {
        #[test]
        fn idempotent(s in "[a-z@#:/. _w]{0,40}|(\\PC{0,30})") {
            let once = clean_tweet(&s);
            prop_assert_eq!(clean_tweet(&once), once);
        }
    }

    #[test]
    fn filter_by_predicate() {
        let ds = Dataset::new(vec![
            Example::new("Ovo je dobar dan", "hr"),
            Example::new("Esse é o dia", "pt-br"),
        ]);
        assert_eq!(filter_english(ds.clone(), |_| false), ds);
        assert!(filter_english(ds, |_| true).is_empty());
    }

    #[test]
    fn stopword_heuristic_on_mixed_set() {
        let ds = Dataset::new(vec![
            Example::new("Thank you for the follow and that's that", "hr"),
            Example::new("Danas je lijep dan u Zagrebu", "hr"),
            Example::new("I love the new album and you should too", "bs"),
            Example::new("Obrigado pela força, vamos que vamos", "pt-br"),
            Example::new("Hoje o dia está lindo para a praia", "pt-pt"),
            Example::new("Ja sam za to, idemo", "sr"),
        ]);
        let kept = filter_english(ds, looks_english);
        let texts: Vec<&str> = kept.examples.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "Danas je lijep dan u Zagrebu",
                "Obrigado pela força, vamos que vamos",
                "Hoje o dia está lindo para a praia",
                "Ja sam za to, idemo",
            ]
        );
    }
}
