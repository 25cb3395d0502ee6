//! Tokens, sentences, confusion sets, candidate pools and the embedding table.
//!
//! Everything here is immutable once built and shared read-only by the usage
//! models, the dictionary filter, the aligner and the selector.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Characters split off the edges of whitespace-delimited chunks.
pub const SPLIT_PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    surface: String,
    norm: String,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::InvalidToken(surface));
        }
        let norm = surface.to_lowercase();
        Ok(Self { surface, norm })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn norm(&self) -> &str {
        &self.norm
    }

    /// True when every character is in [`SPLIT_PUNCTUATION`] or is otherwise
    /// ASCII punctuation.
    pub fn is_punctuation(&self) -> bool {
        self.surface
            .chars()
            .all(|c| SPLIT_PUNCTUATION.contains(&c) || c.is_ascii_punctuation())
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

impl Serialize for Token {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.surface)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let surface = String::deserialize(deserializer)?;
        Token::new(surface).map_err(serde::de::Error::custom)
    }
}

/// Splits on whitespace, then peels punctuation off both ends of each chunk
/// into single-character tokens. Inner punctuation ("don't", "3.5") stays.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && SPLIT_PUNCTUATION.contains(&chars[start]) {
            start += 1;
        }
        while end > start && SPLIT_PUNCTUATION.contains(&chars[end - 1]) {
            end -= 1;
        }
        let single = |c: &char| Token {
            surface: c.to_string(),
            norm: c.to_string(),
        };
        out.extend(chars[..start].iter().map(single));
        if start < end {
            let surface: String = chars[start..end].iter().collect();
            let norm = surface.to_lowercase();
            out.push(Token { surface, norm });
        }
        out.extend(chars[end..].iter().map(single));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Corpus,
    Dictionary,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSentence")]
pub struct Sentence {
    pub id: String,
    pub tokens: Vec<Token>,
    pub target_index: Option<usize>,
    pub source_tag: SourceTag,
    pub l1_text: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct RawSentence {
    id: String,
    tokens: Vec<Token>,
    target_index: Option<usize>,
    source_tag: SourceTag,
    #[serde(default)]
    l1_text: Option<Vec<String>>,
}

impl TryFrom<RawSentence> for Sentence {
    type Error = Error;

    fn try_from(raw: RawSentence) -> Result<Self> {
        let mut sentence = Sentence::new(raw.id, raw.tokens, raw.source_tag)?;
        if let Some(index) = raw.target_index {
            sentence = sentence.with_target(index)?;
        }
        sentence.l1_text = raw.l1_text;
        Ok(sentence)
    }
}

impl Sentence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, source_tag: SourceTag) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::InvalidArgument(format!("sentence {id} has no tokens")));
        }
        Ok(Self {
            id,
            tokens,
            target_index: None,
            source_tag,
            l1_text: None,
        })
    }

    /// Tokenizes `text`; `None` when it contains no tokens.
    pub fn from_text(id: impl Into<String>, text: &str, source_tag: SourceTag) -> Option<Self> {
        Self::new(id, tokenize(text), source_tag).ok()
    }

    pub fn with_target(mut self, index: usize) -> Result<Self> {
        if index >= self.tokens.len() {
            return Err(Error::InvalidArgument(format!(
                "target index {index} out of range for sentence {} ({} tokens)",
                self.id,
                self.tokens.len()
            )));
        }
        self.target_index = Some(index);
        Ok(self)
    }

    pub fn with_l1(mut self, l1: Vec<String>) -> Self {
        self.l1_text = Some(l1);
        self
    }

    pub fn target(&self) -> Result<usize> {
        self.target_index.ok_or_else(|| Error::MissingTarget(self.id.clone()))
    }

    pub fn contains_any(&self, forms: &BTreeSet<String>) -> bool {
        self.tokens.iter().any(|t| forms.contains(t.norm()))
    }

    /// Surface text with spaces removed before closing punctuation.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, token) in self.tokens.iter().enumerate() {
            let tight = matches!(token.surface(), "." | "," | "!" | "?" | ";" | ":" | ")");
            if i > 0 && !tight {
                out.push(' ');
            }
            out.push_str(token.surface());
        }
        out
    }
}

/// A lemma together with every surface form that counts as an occurrence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WordEntry {
    pub lemma: String,
    pub forms: BTreeSet<String>,
}

impl WordEntry {
    /// Forms are lowercased; the lemma is always one of them.
    pub fn new<I, S>(lemma: &str, forms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let lemma = lemma.to_lowercase();
        let mut forms: BTreeSet<String> = forms.into_iter().map(|f| f.as_ref().to_lowercase()).collect();
        forms.insert(lemma.clone());
        Self { lemma, forms }
    }

    pub fn matches(&self, token: &Token) -> bool {
        self.forms.contains(token.norm())
    }
}

#[derive(Deserialize)]
struct RawWordEntry {
    lemma: String,
    #[serde(default)]
    forms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawConfusionSet")]
pub struct ConfusionSet {
    pub id: String,
    pub words: Vec<WordEntry>,
}

#[derive(Deserialize)]
struct RawConfusionSet {
    id: Option<String>,
    words: Vec<RawWordEntry>,
}

impl TryFrom<RawConfusionSet> for ConfusionSet {
    type Error = Error;

    fn try_from(raw: RawConfusionSet) -> Result<Self> {
        let words = raw.words.iter().map(|w| WordEntry::new(&w.lemma, &w.forms)).collect();
        ConfusionSet::new(raw.id, words)
    }
}

impl ConfusionSet {
    /// Accepts two or three words with distinct lemmas. Without an explicit
    /// id the lemmas are joined with `_` (e.g. `refuse_reject`).
    pub fn new(id: Option<String>, words: Vec<WordEntry>) -> Result<Self> {
        if !(2..=3).contains(&words.len()) {
            return Err(Error::InvalidConfusionSet(format!(
                "expected 2 or 3 words, got {}",
                words.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for word in &words {
            if word.lemma.is_empty() {
                return Err(Error::InvalidConfusionSet("empty lemma".into()));
            }
            if !seen.insert(word.lemma.as_str()) {
                return Err(Error::InvalidConfusionSet(format!("duplicate lemma {:?}", word.lemma)));
            }
        }
        let id = id.unwrap_or_else(|| words.iter().map(|w| w.lemma.as_str()).collect::<Vec<_>>().join("_"));
        Ok(Self { id, words })
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|w| w.lemma.as_str())
    }

    pub fn word(&self, lemma: &str) -> Option<&WordEntry> {
        self.words.iter().find(|w| w.lemma == lemma)
    }
}

/// Parses a JSON array of confusion sets; set ids must be unique.
pub fn load_confusion_sets(reader: impl std::io::Read) -> Result<Vec<ConfusionSet>> {
    let sets: Vec<ConfusionSet> = serde_json::from_reader(reader)?;
    let mut ids = BTreeSet::new();
    for set in &sets {
        if !ids.insert(set.id.as_str()) {
            return Err(Error::InvalidConfusionSet(format!("duplicate set id {:?}", set.id)));
        }
    }
    Ok(sets)
}

/// Candidate sentences per word lemma.
pub type SentencePools = BTreeMap<String, Vec<Sentence>>;

/// Default number of candidate sentences collected per word.
pub const DEFAULT_POOL_CAP: usize = 5_000;

/// Up to `cap` corpus sentences containing a form of `word`, in corpus order,
/// each targeted at its first matching token.
pub fn build_pool(corpus: &[Sentence], word: &WordEntry, cap: usize) -> Vec<Sentence> {
    corpus
        .iter()
        .filter_map(|s| {
            let index = s.tokens.iter().position(|t| word.matches(t))?;
            let mut hit = s.clone();
            hit.target_index = Some(index);
            Some(hit)
        })
        .take(cap)
        .collect()
}

/// Pools for every word of the set.
pub fn build_pools(corpus: &[Sentence], set: &ConfusionSet, cap: usize) -> SentencePools {
    set.words
        .iter()
        .map(|w| (w.lemma.clone(), build_pool(corpus, w, cap)))
        .collect()
}

/// One sentence per line of raw text; ids are `{prefix}{line:07}` (0-based)
/// so that lexicographic id order equals file order. Blank lines are skipped
/// but still consume a line number.
pub fn read_corpus(reader: impl BufRead, prefix: &str, tag: SourceTag) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(sentence) = Sentence::from_text(format!("{prefix}{line_no:07}"), &line, tag) {
            out.push(sentence);
        }
    }
    Ok(out)
}

pub fn write_pool(mut writer: impl Write, pool: &[Sentence]) -> Result<()> {
    for sentence in pool {
        serde_json::to_writer(&mut writer, sentence)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pool(reader: impl BufRead) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sentence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(sentence);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

/// Dimensionality of the pretrained vectors used by default.
pub const DEFAULT_EMBEDDING_DIM: usize = 300;

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: HashMap::new(),
        })
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        self.entries.insert(word.to_lowercase(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, norm: &str) -> Option<&[f64]> {
        self.entries.get(norm).map(Vec::as_slice)
    }

    /// Lookup by normalized form; `None` marks an out-of-vocabulary token.
    pub fn embed(&self, token: &Token) -> Option<&[f64]> {
        self.get(token.norm())
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.entries.contains_key(token.norm())
    }

    /// Writes entries sorted by word, one `word v1 .. vdim` line each.
    pub fn write(&self, mut writer: impl Write) -> Result<()> {
        let mut words: Vec<&String> = self.entries.keys().collect();
        words.sort();
        for word in words {
            write!(writer, "{word}")?;
            for v in &self.entries[word] {
                write!(writer, " {v}")?;
            }
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads `word v1 .. vdim` lines. Later duplicates overwrite earlier ones;
/// blank lines are ignored.
pub fn load_embeddings(reader: impl BufRead, dim: usize) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::new(dim)?;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            continue;
        };
        let mut vector = Vec::with_capacity(dim);
        for field in fields {
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("unparsable number {field:?}"),
            })?;
            vector.push(value);
        }
        if vector.len() != dim {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {dim} values, found {}", vector.len()),
            });
        }
        table.entries.insert(word.to_lowercase(), vector);
    }
    Ok(table)
}
