//! Gender-neutral prompt suites.
//!
//! Every prompt starts with [`PROMPT_PREFIX`] and attaches one descriptive
//! word through the template of its [`PromptCategory`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROMPT_PREFIX: &str = "a photo of one real person";

/// The word list shipped with the crate (100 words: 40/30/10/10/10).
pub const BUNDLED_WORDS_CSV: &str = include_str!("../data/words/default_words.csv");

/// Tokens that make a prompt gendered. Matched against whole tokens only,
/// so "postman" does not trip "man".
pub const DEFAULT_DENY_LIST: &[&str] = &[
    "actress", "actor", "man", "men", "woman", "women", "male", "female", "boy", "girl", "boys",
    "girls", "he", "she", "him", "her", "his", "hers", "mother", "father", "mom", "dad", "son",
    "daughter", "brother", "sister", "husband", "wife", "king", "queen", "prince", "princess",
    "waitress", "waiter", "businessman", "businesswoman", "policeman", "policewoman",
    "chairman", "chairwoman", "lady", "gentleman", "masculine", "feminine", "bride", "groom",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt category `{0}`")]
    UnknownCategory(String),
    #[error("empty word in category {0}")]
    EmptyWord(PromptCategory),
    #[error("duplicate word `{word}` in category {category}")]
    DuplicateWord { category: PromptCategory, word: String },
    #[error("category {0} has an empty word list")]
    EmptyCategory(PromptCategory),
    #[error("prompt `{text}` contains gendered token `{token}`")]
    GenderedToken { text: String, token: String },
    #[error("invalid article override `{0}` (expected a, an or none)")]
    InvalidArticle(String),
    #[error("word list: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptCategory {
    Profession,
    Personality,
    Activity,
    Object,
    Place,
}

impl PromptCategory {
    pub const ALL: [PromptCategory; 5] = [
        PromptCategory::Profession,
        PromptCategory::Personality,
        PromptCategory::Activity,
        PromptCategory::Object,
        PromptCategory::Place,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptCategory::Profession => "profession",
            PromptCategory::Personality => "personality",
            PromptCategory::Activity => "activity",
            PromptCategory::Object => "object",
            PromptCategory::Place => "place",
        }
    }

    /// Template pattern with `[word]` as the placeholder.
    pub fn template(self) -> &'static str {
        match self {
            PromptCategory::Profession => "prefix + who is a/an [word]",
            PromptCategory::Personality | PromptCategory::Activity => "prefix + who is [word]",
            PromptCategory::Object => "prefix + with a/an [word]",
            PromptCategory::Place => "prefix + at the [word]",
        }
    }
}

impl fmt::Display for PromptCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptCategory {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let needle = s.trim().to_ascii_lowercase();
        PromptCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == needle)
            .ok_or_else(|| PromptError::UnknownCategory(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Article {
    A,
    An,
    None,
}

impl Article {
    pub fn for_word(word: &str) -> Article {
        match word.chars().next() {
            Some('a' | 'e' | 'i' | 'o' | 'u') => Article::An,
            _ => Article::A,
        }
    }
}

impl FromStr for Article {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Article::A),
            "an" => Ok(Article::An),
            "none" => Ok(Article::None),
            other => Err(PromptError::InvalidArticle(other.to_string())),
        }
    }
}

/// One word of a word list, with an optional article override.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordEntry {
    pub word: String,
    pub article: Option<Article>,
}

impl WordEntry {
    pub fn new(word: impl Into<String>) -> Self {
        WordEntry { word: word.into(), article: None }
    }

    pub fn with_article(word: impl Into<String>, article: Article) -> Self {
        WordEntry { word: word.into(), article: Some(article) }
    }
}

/// Word lists keyed by category; suite order follows [`PromptCategory::ALL`].
pub type WordLists = BTreeMap<PromptCategory, Vec<WordEntry>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub id: String,
    pub category: PromptCategory,
    pub word: String,
    pub text: String,
}

fn normalize(word: &str) -> String {
    word.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn prompt_id(category: PromptCategory, word: &str) -> String {
    let slug: String = word
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    format!("{}-{}", category.as_str(), slug)
}

pub fn render_prompt(category: PromptCategory, word: &str) -> Result<PromptSpec, PromptError> {
    render_with_article(category, word, None)
}

pub fn render_with_article(
    category: PromptCategory,
    word: &str,
    article: Option<Article>,
) -> Result<PromptSpec, PromptError> {
    let word = normalize(word);
    if word.is_empty() {
        return Err(PromptError::EmptyWord(category));
    }
    let text = match category {
        PromptCategory::Profession | PromptCategory::Object => {
            let lead = if category == PromptCategory::Profession { "who is" } else { "with" };
            match article.unwrap_or_else(|| Article::for_word(&word)) {
                Article::A => format!("{PROMPT_PREFIX} {lead} a {word}"),
                Article::An => format!("{PROMPT_PREFIX} {lead} an {word}"),
                Article::None => format!("{PROMPT_PREFIX} {lead} {word}"),
            }
        }
        PromptCategory::Personality | PromptCategory::Activity => {
            format!("{PROMPT_PREFIX} who is {word}")
        }
        PromptCategory::Place => format!("{PROMPT_PREFIX} at the {word}"),
    };
    Ok(PromptSpec { id: prompt_id(category, &word), category, word, text })
}

/// Returns the first deny-listed token appearing in `text`.
pub fn find_gendered_token<'a>(text: &str, deny: &[&'a str]) -> Option<&'a str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|tok| {
            let tok = tok.to_lowercase();
            deny.iter().copied().find(|d| *d == tok)
        })
}

pub fn build_suite(words: &WordLists) -> Result<Vec<PromptSpec>, PromptError> {
    build_suite_with_deny_list(words, DEFAULT_DENY_LIST)
}

pub fn build_suite_with_deny_list(
    words: &WordLists,
    deny: &[&str],
) -> Result<Vec<PromptSpec>, PromptError> {
    let mut suite = Vec::with_capacity(words.values().map(Vec::len).sum());
    for category in PromptCategory::ALL {
        let Some(list) = words.get(&category) else { continue };
        if list.is_empty() {
            return Err(PromptError::EmptyCategory(category));
        }
        let mut seen = HashSet::new();
        for entry in list {
            let spec = render_with_article(category, &entry.word, entry.article)?;
            if !seen.insert(spec.word.clone()) {
                return Err(PromptError::DuplicateWord { category, word: spec.word });
            }
            if let Some(token) = find_gendered_token(&spec.text, deny) {
                return Err(PromptError::GenderedToken {
                    text: spec.text,
                    token: token.to_string(),
                });
            }
            suite.push(spec);
        }
    }
    Ok(suite)
}

#[derive(Debug, Deserialize)]
struct WordRow {
    category: String,
    word: String,
    #[serde(default)]
    article_override: Option<String>,
}

/// Parses a `category,word,article_override` CSV. Input order is kept
/// within each category.
pub fn read_word_lists<R: Read>(reader: R) -> Result<WordLists, PromptError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut lists = WordLists::new();
    for row in rdr.deserialize::<WordRow>() {
        let row = row.map_err(|e| PromptError::Csv(e.to_string()))?;
        let category: PromptCategory = row.category.parse()?;
        let article = match row.article_override.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(a) => Some(a.parse()?),
        };
        lists.entry(category).or_default().push(WordEntry { word: row.word, article });
    }
    Ok(lists)
}

pub fn bundled_word_lists() -> WordLists {
    read_word_lists(BUNDLED_WORDS_CSV.as_bytes()).expect("bundled word list is valid")
}

pub fn write_suite_jsonl<W: Write>(mut out: W, suite: &[PromptSpec]) -> Result<(), PromptError> {
    for spec in suite {
        let line = serde_json::to_string(spec).map_err(|e| PromptError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| PromptError::Io(e.to_string()))?;
    }
    Ok(())
}

pub fn read_suite_jsonl(text: &str) -> Result<Vec<PromptSpec>, PromptError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PromptError::Io(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lists(entries: &[(PromptCategory, &[&str])]) -> WordLists {
        entries
            .iter()
            .map(|(c, ws)| (*c, ws.iter().map(|w| WordEntry::new(*w)).collect()))
            .collect()
    }

    #[test]
    fn renders_category_templates() {
        let p = render_prompt(PromptCategory::Profession, "lawyer").unwrap();
        assert_eq!(p.text, "a photo of one real person who is a lawyer");
        let p = render_prompt(PromptCategory::Object, "book").unwrap();
        assert_eq!(p.text, "a photo of one real person with a book");
        let p = render_prompt(PromptCategory::Profession, "engineer").unwrap();
        assert_eq!(p.text, "a photo of one real person who is an engineer");
        let p = render_prompt(PromptCategory::Personality, "kind").unwrap();
        assert_eq!(p.text, "a photo of one real person who is kind");
        let p = render_prompt(PromptCategory::Activity, "laughing").unwrap();
        assert_eq!(p.text, "a photo of one real person who is laughing");
        let p = render_prompt(PromptCategory::Place, "school campus").unwrap();
        assert_eq!(p.text, "a photo of one real person at the school campus");
        assert_eq!(p.id, "place-school-campus");
    }

    #[test]
    fn article_override_wins() {
        let p = render_with_article(PromptCategory::Profession, "honest", Some(Article::An)).unwrap();
        assert!(p.text.ends_with("who is an honest"));
        let p = render_with_article(PromptCategory::Object, "eye glasses", Some(Article::None))
            .unwrap();
        assert_eq!(p.text, "a photo of one real person with eye glasses");
    }

    #[test]
    fn unknown_category_is_named() {
        let err = "colour".parse::<PromptCategory>().unwrap_err();
        assert_eq!(err, PromptError::UnknownCategory("colour".into()));
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn empty_word_rejected() {
        assert!(matches!(
            render_prompt(PromptCategory::Place, "  "),
            Err(PromptError::EmptyWord(PromptCategory::Place))
        ));
    }

    #[test]
    fn bundled_lists_give_hundred_prompts() {
        let words = bundled_word_lists();
        let sizes: Vec<usize> = PromptCategory::ALL.iter().map(|c| words[c].len()).collect();
        assert_eq!(sizes, vec![40, 30, 10, 10, 10]);
        let suite = build_suite(&words).unwrap();
        assert_eq!(suite.len(), 100);
        let ids: HashSet<_> = suite.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 100);
        assert!(suite.iter().any(|p| p.text == "a photo of one real person who is a lawyer"));
    }

    #[test]
    fn single_word_suite() {
        let suite = build_suite(&lists(&[(PromptCategory::Place, &["gym"])])).unwrap();
        assert_eq!(suite.len(), 1);
    }

    #[test]
    fn two_category_order() {
        let w = lists(&[
            (PromptCategory::Object, &["pen", "cup", "tie"]),
            (PromptCategory::Profession, &["nurse", "pilot"]),
        ]);
        let words: Vec<_> = build_suite(&w).unwrap().into_iter().map(|p| p.id).collect();
        assert_eq!(
            words,
            vec!["profession-nurse", "profession-pilot", "object-pen", "object-cup", "object-tie"]
        );
    }

    #[test]
    fn duplicate_word_named() {
        let w = lists(&[(PromptCategory::Personality, &["kind", "Kind "])]);
        assert_eq!(
            build_suite(&w).unwrap_err(),
            PromptError::DuplicateWord { category: PromptCategory::Personality, word: "kind".into() }
        );
    }

    #[test]
    fn gendered_word_is_build_error() {
        let w = lists(&[(PromptCategory::Profession, &["actress"])]);
        assert!(matches!(build_suite(&w), Err(PromptError::GenderedToken { token, .. }) if token == "actress"));
        let w = lists(&[(PromptCategory::Profession, &["postman"])]);
        assert!(build_suite(&w).is_ok());
    }

    #[test]
    fn csv_reader_parses_overrides_and_rejects_bad_category() {
        let csv = "category,word,article_override\nprofession,hour keeper,an\nplace,gym,\n";
        let w = read_word_lists(csv.as_bytes()).unwrap();
        assert_eq!(w[&PromptCategory::Profession][0].article, Some(Article::An));
        assert_eq!(w[&PromptCategory::Place][0].article, None);
        let bad = "category,word,article_override\ncolour,red,\n";
        assert!(matches!(read_word_lists(bad.as_bytes()), Err(PromptError::UnknownCategory(c)) if c == "colour"));
    }

    proptest! {
        #[test]
        fn suite_size_is_sum_and_deterministic(
            counts in proptest::collection::vec(0usize..6, 5)
        ) {
            let mut w = WordLists::new();
            for (c, n) in PromptCategory::ALL.iter().zip(&counts) {
                if *n > 0 {
                    w.insert(*c, (0..*n).map(|i| WordEntry::new(format!("word{i}"))).collect());
                }
            }
            let a = build_suite(&w).unwrap();
            let b = build_suite(&w).unwrap();
            prop_assert_eq!(a.len(), counts.iter().sum::<usize>());
            let mut ja = Vec::new();
            let mut jb = Vec::new();
            write_suite_jsonl(&mut ja, &a).unwrap();
            write_suite_jsonl(&mut jb, &b).unwrap();
            prop_assert_eq!(ja, jb);
            for p in &a {
                prop_assert!(p.text.starts_with(PROMPT_PREFIX));
            }
        }
    }
}
