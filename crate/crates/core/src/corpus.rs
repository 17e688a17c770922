//! APE triplets, per-instance conservative sets and corpus containers.
//!
//! On disk a corpus is a directory of parallel plain-text files
//! (`src.txt`, `mt.txt`, optional `pe.txt`), one sentence per line,
//! tokens separated by spaces.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, BOS, EOS, PAD};

pub const SRC_FILE: &str = "src.txt";
pub const MT_FILE: &str = "mt.txt";
pub const PE_FILE: &str = "pe.txt";

/// One post-editing instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    src: Vec<TokenId>,
    mt: Vec<TokenId>,
    pe: Option<Vec<TokenId>>,
}

fn check_sequence(name: &str, seq: &[TokenId]) -> Result<()> {
    if let Some(pos) = seq.iter().position(|&t| matches!(t, PAD | BOS | EOS)) {
        return Err(Error::InvalidTriplet(format!(
            "{name} contains reserved token id {} at position {pos}",
            seq[pos]
        )));
    }
    Ok(())
}

impl Triplet {
    pub fn new(src: Vec<TokenId>, mt: Vec<TokenId>, pe: Option<Vec<TokenId>>) -> Result<Self> {
        if src.is_empty() {
            return Err(Error::InvalidTriplet("src is empty".into()));
        }
        if mt.is_empty() {
            return Err(Error::InvalidTriplet("mt is empty".into()));
        }
        check_sequence("src", &src)?;
        check_sequence("mt", &mt)?;
        if let Some(pe) = &pe {
            check_sequence("pe", pe)?;
        }
        Ok(Self { src, mt, pe })
    }

    pub fn src(&self) -> &[TokenId] {
        &self.src
    }

    pub fn mt(&self) -> &[TokenId] {
        &self.mt
    }

    pub fn pe(&self) -> Option<&[TokenId]> {
        self.pe.as_deref()
    }

    pub fn with_pe(mut self, pe: Vec<TokenId>) -> Result<Self> {
        check_sequence("pe", &pe)?;
        self.pe = Some(pe);
        Ok(self)
    }

    /// Fails if any id falls outside `vocab`.
    pub fn check_ids(&self, vocab: &Vocabulary) -> Result<()> {
        let n = vocab.len() as TokenId;
        let all = self
            .src
            .iter()
            .chain(&self.mt)
            .chain(self.pe.iter().flatten());
        if let Some(&bad) = all.into_iter().find(|&&t| t >= n) {
            return Err(Error::InvalidTriplet(format!(
                "token id {bad} outside vocabulary of size {n}"
            )));
        }
        Ok(())
    }

    pub fn conservative_set(&self) -> ConservativeSet {
        ConservativeSet::new(&self.src, &self.mt)
    }
}

/// The tokens a decoder may emit without paying the conservativeness
/// penalty: every type seen in src or mt, plus `EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConservativeSet {
    ids: BTreeSet<TokenId>,
    always_allowed: BTreeSet<TokenId>,
}

impl ConservativeSet {
    pub fn new(src: &[TokenId], mt: &[TokenId]) -> Self {
        Self {
            ids: src.iter().chain(mt).copied().collect(),
            always_allowed: BTreeSet::from([EOS]),
        }
    }

    /// A set with no input tokens; only the always-allowed specials pass.
    pub fn empty() -> Self {
        Self {
            ids: BTreeSet::new(),
            always_allowed: BTreeSet::from([EOS]),
        }
    }

    pub fn ids(&self) -> &BTreeSet<TokenId> {
        &self.ids
    }

    pub fn always_allowed(&self) -> &BTreeSet<TokenId> {
        &self.always_allowed
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.ids.contains(&id) || self.always_allowed.contains(&id)
    }

    /// Dense membership mask over `0..vocab_size`.
    pub fn mask(&self, vocab_size: usize) -> Vec<bool> {
        let mut mask = vec![false; vocab_size];
        for &id in self.ids.iter().chain(&self.always_allowed) {
            if let Some(m) = mask.get_mut(id as usize) {
                *m = true;
            }
        }
        mask
    }
}

/// Where a corpus item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    InDomain,
    SyntheticFold(usize),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::InDomain => f.write_str("in-domain"),
            Provenance::SyntheticFold(i) => write!(f, "synthetic-fold-{i}"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "in-domain" {
            return Ok(Provenance::InDomain);
        }
        s.strip_prefix("synthetic-fold-")
            .and_then(|n| n.parse().ok())
            .map(Provenance::SyntheticFold)
            .ok_or_else(|| Error::config("provenance", format!("unrecognised tag {s:?}")))
    }
}

/// Triplets with a provenance tag each.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    items: Vec<Triplet>,
    provenance: Vec<Provenance>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn in_domain(items: Vec<Triplet>) -> Self {
        let provenance = vec![Provenance::InDomain; items.len()];
        Self { items, provenance }
    }

    pub fn push(&mut self, item: Triplet, provenance: Provenance) {
        self.items.push(item);
        self.provenance.push(provenance);
    }

    pub fn items(&self) -> &[Triplet] {
        &self.items
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Triplet, Provenance)> {
        self.items.iter().zip(self.provenance.iter().copied())
    }

    /// Converts a raw text corpus, mapping unseen tokens to `UNK`.
    pub fn from_raw(raw: &RawCorpus, vocab: &Vocabulary) -> Result<Self> {
        let mut items = Vec::with_capacity(raw.len());
        for i in 0..raw.len() {
            let pe = raw.pe.as_ref().map(|pe| vocab.encode(&pe[i]));
            let t = Triplet::new(vocab.encode(&raw.src[i]), vocab.encode(&raw.mt[i]), pe)
                .map_err(|e| e.at_item(i))?;
            items.push(t);
        }
        Ok(Self::in_domain(items))
    }

    /// Renders the corpus back into text form.
    pub fn to_raw(&self, vocab: &Vocabulary) -> RawCorpus {
        let pe = if self.items.iter().all(|t| t.pe.is_some()) && !self.items.is_empty() {
            Some(self.items.iter().map(|t| vocab.decode(t.pe().unwrap())).collect())
        } else {
            None
        };
        RawCorpus {
            src: self.items.iter().map(|t| vocab.decode(&t.src)).collect(),
            mt: self.items.iter().map(|t| vocab.decode(&t.mt)).collect(),
            pe,
        }
    }
}

/// Untokenized-id view of a corpus directory: one string per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawCorpus {
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Option<Vec<String>>,
}

impl RawCorpus {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Every line of every side, for vocabulary building.
    pub fn all_lines(&self) -> impl Iterator<Item = &str> {
        self.src
            .iter()
            .chain(&self.mt)
            .chain(self.pe.iter().flatten())
            .map(String::as_str)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let src = read_lines(&dir.join(SRC_FILE))?;
        let mt = read_lines(&dir.join(MT_FILE))?;
        let pe_path = dir.join(PE_FILE);
        let pe = if pe_path.exists() {
            Some(read_lines(&pe_path)?)
        } else {
            None
        };
        let raw = Self { src, mt, pe };
        raw.validate(dir)?;
        Ok(raw)
    }

    fn validate(&self, dir: &Path) -> Result<()> {
        let format_err = |message: String| Error::Format {
            path: dir.to_owned(),
            message,
        };
        if self.mt.len() != self.src.len() {
            return Err(format_err(format!(
                "{MT_FILE} has {} lines but {SRC_FILE} has {}",
                self.mt.len(),
                self.src.len()
            )));
        }
        if let Some(pe) = &self.pe {
            if pe.len() != self.src.len() {
                return Err(format_err(format!(
                    "{PE_FILE} has {} lines but {SRC_FILE} has {}",
                    pe.len(),
                    self.src.len()
                )));
            }
        }
        if let Some(i) = self.src.iter().position(|l| l.trim().is_empty()) {
            return Err(format_err(format!("{SRC_FILE} line {} is empty", i + 1)));
        }
        Ok(())
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_lines(&dir.join(SRC_FILE), &self.src)?;
        write_lines(&dir.join(MT_FILE), &self.mt)?;
        if let Some(pe) = &self.pe {
            write_lines(&dir.join(PE_FILE), pe)?;
        }
        Ok(())
    }
}

/// Reads a UTF-8 file into lines (a trailing newline does not add a line).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    let mut text = String::with_capacity(lines.iter().map(|l| l.as_ref().len() + 1).sum());
    for line in lines {
        text.push_str(line.as_ref());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
