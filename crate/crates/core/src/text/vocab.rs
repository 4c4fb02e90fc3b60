use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEQ_START: usize = 2;
pub const SEQ_SEP: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "<sep>"];

/// Token ↔ id mapping with four reserved ids at the front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::empty()
    }
}

impl Vocabulary {
    /// Only the reserved entries.
    pub fn empty() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = tokens.iter().cloned().zip(0..).collect();
        Self { ids, tokens }
    }

    /// Keeps tokens seen at least `min_count` times, ordered by descending
    /// frequency and then alphabetically.
    pub fn build<'a, I, S>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        if min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for tokens in corpus {
            for t in tokens {
                *counts.entry(t.as_ref()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::empty();
        for (t, _) in ranked {
            v.push(t);
        }
        Ok(v)
    }

    fn push(&mut self, token: &str) {
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(s, "{t}\t{i}");
        }
        s
    }

    pub fn from_tsv(text: &str, source: &str) -> Result<Self> {
        let mut v = Self {
            ids: HashMap::new(),
            tokens: Vec::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let loc = || format!("line {}", n + 1);
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(source, loc(), "expected token<TAB>id"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(source, loc(), format!("bad id `{id}`")))?;
            if id != v.tokens.len() {
                return Err(Error::parse(source, loc(), "ids must be consecutive from 0"));
            }
            if id < RESERVED.len() && tok != RESERVED[id] {
                return Err(Error::parse(source, loc(), "reserved id mismatch"));
            }
            if v.ids.contains_key(tok) {
                return Err(Error::parse(source, loc(), format!("duplicate token `{tok}`")));
            }
            v.push(tok);
        }
        if v.tokens.len() < RESERVED.len() {
            return Err(Error::parse(source, "end", "missing reserved entries"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, &path.display().to_string())
    }
}
