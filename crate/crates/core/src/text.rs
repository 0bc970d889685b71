//! Tokenization, lexicon matching, cue lists and prompt templates.
//!
//! All vocabularies are plain data: one entry per line, `#` starts a comment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// Lowercased maximal runs of alphabetic characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text, and on
/// blank lines. Empty pieces are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        let next = chars.get(i + 1).map(|&(_, n)| n);
        let boundary = match c {
            '.' | '!' | '?' => next.is_none_or(char::is_whitespace),
            '\n' => next == Some('\n'),
            _ => false,
        };
        if boundary {
            let end = pos + c.len_utf8();
            let piece = text[start..end].trim();
            if !piece.is_empty() {
                out.push(piece);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Parses a one-entry-per-line list.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StopWords(HashSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        Self(parse_list(text).into_iter().map(|w| w.to_lowercase()).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&read_file(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Alphabetic tokens of at least three letters that are not stopwords.
pub fn content_tokens(text: &str, stop: &StopWords) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| t.chars().count() >= 3 && !stop.contains(t))
        .collect()
}

/// Domain vocabulary. Entries are stored as content-token sequences so that
/// multi-word terms match against the same token stream they are scored on.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    // first token -> entry lengths, longest first
    by_first: HashMap<String, Vec<Vec<String>>>,
    size: usize,
}

impl Lexicon {
    pub fn from_terms<I, S>(terms: I, stop: &StopWords) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut by_first: HashMap<String, Vec<Vec<String>>> = HashMap::new();
        let mut seen = HashSet::new();
        for term in terms {
            let toks = content_tokens(term.as_ref(), stop);
            if toks.is_empty() || !seen.insert(toks.clone()) {
                continue;
            }
            by_first.entry(toks[0].clone()).or_default().push(toks);
        }
        for entries in by_first.values_mut() {
            entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        }
        let size = seen.len();
        Self { by_first, size }
    }

    pub fn parse(text: &str, stop: &StopWords) -> Self {
        Self::from_terms(parse_list(text), stop)
    }

    pub fn load(path: &Path, stop: &StopWords) -> Result<Self> {
        Ok(Self::parse(&read_file(path)?, stop))
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Whether a single token is itself a one-word entry.
    pub fn contains_word(&self, word: &str) -> bool {
        self.by_first
            .get(word)
            .is_some_and(|es| es.iter().any(|e| e.len() == 1))
    }

    /// One-word entries that occur in no longer entry, sorted. Such words
    /// score exactly one hit wherever they appear.
    pub fn isolated_words(&self) -> Vec<String> {
        let in_phrase: HashSet<&str> = self
            .by_first
            .values()
            .flatten()
            .filter(|e| e.len() > 1)
            .flatten()
            .map(String::as_str)
            .collect();
        let mut out: Vec<String> = self
            .by_first
            .values()
            .flatten()
            .filter(|e| e.len() == 1 && !in_phrase.contains(e[0].as_str()))
            .map(|e| e[0].clone())
            .collect();
        out.sort();
        out
    }

    /// Number of tokens covered by lexicon matches, scanning left to right
    /// and taking the longest entry that matches at each position.
    pub fn count_hits(&self, tokens: &[String]) -> usize {
        let mut i = 0;
        let mut hits = 0;
        while i < tokens.len() {
            let matched = self.by_first.get(&tokens[i]).and_then(|entries| {
                entries
                    .iter()
                    .find(|e| tokens[i..].starts_with(e))
                    .map(Vec::len)
            });
            match matched {
                Some(n) => {
                    hits += n;
                    i += n;
                }
                None => i += 1,
            }
        }
        hits
    }
}

/// Named keyword lists parsed from a sectioned file:
///
/// ```text
/// [observation]
/// shows
/// is visible
/// ```
///
/// An entry made only of punctuation (such as `?`) matches that literal
/// character in the raw text; anything else matches as a contiguous token
/// sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CueSets {
    sections: BTreeMap<String, CueList>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CueList {
    phrases: Vec<Vec<String>>,
    literals: Vec<String>,
}

impl CueList {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list = CueList::default();
        for e in entries {
            let toks = tokenize(e.as_ref());
            if toks.is_empty() {
                list.literals.push(e.as_ref().trim().to_string());
            } else {
                list.phrases.push(toks);
            }
        }
        list
    }

    pub fn matches(&self, raw: &str, tokens: &[String]) -> bool {
        self.literals.iter().any(|l| raw.contains(l.as_str()))
            || self
                .phrases
                .iter()
                .any(|p| tokens.windows(p.len()).any(|w| w == p.as_slice()))
    }

    /// Entries that are exactly one token.
    pub fn single_words(&self) -> impl Iterator<Item = &str> {
        self.phrases
            .iter()
            .filter(|p| p.len() == 1)
            .map(|p| p[0].as_str())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.phrases.iter().flatten().map(String::as_str)
    }
}

impl CueSets {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            match &current {
                Some(s) => sections.get_mut(s).unwrap().push(line.to_string()),
                None => {
                    return Err(Error::Parse {
                        path: "<cues>".into(),
                        line: n + 1,
                        message: "entry before any [section] header".into(),
                    })
                }
            }
        }
        Ok(Self {
            sections: sections
                .into_iter()
                .map(|(k, v)| (k, CueList::from_entries(v)))
                .collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn get(&self, name: &str) -> Option<&CueList> {
        self.sections.get(name)
    }

    /// Fetches a section that must exist.
    pub fn require(&self, name: &str) -> Result<&CueList> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("cue list is missing section [{name}]")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }
}

/// Text with `{name}` placeholders. `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    placeholders: Vec<String>,
}

enum Piece<'a> {
    Text(&'a str),
    Var(&'a str),
}

fn pieces(source: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let bytes = source.as_bytes();
    let (mut i, mut start) = (0, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&source[start..i + 1]));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&source[start..i + 1]));
                i += 2;
                start = i;
            }
            b'{' => {
                let close = source[i..]
                    .find('}')
                    .ok_or_else(|| Error::invalid("unterminated placeholder in template"))?;
                let name = &source[i + 1..i + close];
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(Error::invalid(format!("bad placeholder name {{{name}}}")));
                }
                out.push(Piece::Text(&source[start..i]));
                out.push(Piece::Var(name));
                i += close + 1;
                start = i;
            }
            b'}' => return Err(Error::invalid("stray '}' in template")),
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&source[start..]));
    Ok(out)
}

impl Template {
    pub fn parse(source: impl Into<String>) -> Result<Self> {
        let source = source.into();
        let mut placeholders = Vec::new();
        for p in pieces(&source)? {
            if let Piece::Var(v) = p {
                if !placeholders.iter().any(|x| x == v) {
                    placeholders.push(v.to_string());
                }
            }
        }
        Ok(Self {
            source,
            placeholders,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(read_file(path)?)
    }

    pub fn placeholders(&self) -> &[String] {
        &self.placeholders
    }

    /// Fails if the template uses a placeholder outside `allowed`.
    pub fn check_placeholders(&self, allowed: &[&str]) -> Result<()> {
        for p in &self.placeholders {
            if !allowed.contains(&p.as_str()) {
                return Err(Error::Config(format!(
                    "template placeholder {{{p}}} is not one of {allowed:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.source.len());
        for p in pieces(&self.source)? {
            match p {
                Piece::Text(t) => out.push_str(t),
                Piece::Var(v) => {
                    let value = vars
                        .iter()
                        .find(|(k, _)| *k == v)
                        .map(|(_, val)| *val)
                        .ok_or_else(|| Error::invalid(format!("no value for placeholder {{{v}}}")))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_folds_case_and_splits_punctuation() {
        assert_eq!(
            tokenize("Cross-section of the HEART, 3 nuclei."),
            vec!["cross", "section", "of", "the", "heart", "nuclei"]
        );
    }

    #[test]
    fn sentences_ignore_decimal_points() {
        let s = split_sentences("Score is 0.96 here. Next one! Last?");
        assert_eq!(s, vec!["Score is 0.96 here.", "Next one!", "Last?"]);
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn content_tokens_drop_short_and_stop() {
        let stop = StopWords::parse("the\nwith # comment\n");
        assert_eq!(
            content_tokens("The cell is with an atypical nucleus", &stop),
            vec!["cell", "atypical", "nucleus"]
        );
    }

    #[test]
    fn lexicon_matches_longest_first() {
        let stop = StopWords::parse("of\n");
        let lex = Lexicon::parse("lymph\nlymph node\nnode\n# c\ncarcinoma in situ\n", &stop);
        let toks: Vec<String> = ["lymph", "node", "carcinoma", "situ", "tissue"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(lex.count_hits(&toks), 4);
        assert!(lex.contains_word("lymph"));
        assert!(!lex.contains_word("carcinoma"));
    }

    #[test]
    fn cue_sets_parse_and_match() {
        let cues = CueSets::parse("[q]\n?\nwhat\n[region]\nfield of view\n").unwrap();
        let raw = "Assess the field of view.";
        let toks = tokenize(raw);
        assert!(cues.require("region").unwrap().matches(raw, &toks));
        assert!(!cues.require("q").unwrap().matches(raw, &toks));
        assert!(cues.require("q").unwrap().matches("Is it?", &tokenize("Is it?")));
        assert!(cues.require("missing").is_err());
        assert!(CueSets::parse("orphan\n[a]\n").is_err());
    }

    #[test]
    fn template_render_and_escape() {
        let t = Template::parse("Q: {question} {{literal}} {question}").unwrap();
        assert_eq!(t.placeholders(), &["question".to_string()]);
        assert_eq!(
            t.render(&[("question", "why")]).unwrap(),
            "Q: why {literal} why"
        );
        assert!(t.render(&[]).is_err());
        assert!(Template::parse("{oops").is_err());
        assert!(Template::parse("a } b").is_err());
        assert!(t.check_placeholders(&["other"]).is_err());
    }
}
