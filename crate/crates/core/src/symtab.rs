//! Target vocabulary: parse symbols followed by a block of pointer ids.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearizer::{TargetSequence, TargetSymbol};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

#[derive(Debug, Error)]
pub enum SymtabError {
    #[error("symbol {0} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("id {0} is outside the vocabulary")]
    UnknownId(usize),
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("malformed symbol table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
struct Persisted {
    symbols: Vec<String>,
    max_src_len: usize,
}

/// Ids `[0, |V|)` are parse symbols with PAD, BOS, EOS pinned first;
/// ids `[|V|, |V| + max_src_len)` are `Pointer(0..max_src_len)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    symbols: Vec<TargetSymbol>,
    index: HashMap<TargetSymbol, usize>,
    max_src_len: usize,
}

impl SymbolTable {
    /// Build from linearized targets and their source lengths.
    /// `max_src_len` overrides the corpus maximum when given.
    pub fn build<'a, I>(targets: I, max_src_len: Option<usize>) -> Result<Self, SymtabError>
    where
        I: IntoIterator<Item = (&'a TargetSequence, usize)>,
    {
        let mut seen = BTreeSet::new();
        let mut longest = 0;
        let mut any = false;
        for (t, n) in targets {
            any = true;
            longest = longest.max(n);
            for s in t.symbols() {
                if !matches!(s, TargetSymbol::Pointer(_)) && !s.is_special() {
                    seen.insert(s.to_string());
                }
            }
        }
        if !any {
            return Err(SymtabError::EmptyCorpus);
        }
        let mut names = vec!["<pad>".to_string(), "<s>".to_string(), "</s>".to_string()];
        names.extend(seen);
        Self::from_names(names, max_src_len.unwrap_or(longest))
    }

    fn from_names(names: Vec<String>, max_src_len: usize) -> Result<Self, SymtabError> {
        let symbols: Vec<TargetSymbol> = names
            .iter()
            .map(|s| s.parse().map_err(|e| SymtabError::Malformed(format!("{e}"))))
            .collect::<Result<_, _>>()?;
        if symbols.get(..3) != Some(&[TargetSymbol::Pad, TargetSymbol::Bos, TargetSymbol::Eos][..]) {
            return Err(SymtabError::Malformed("first symbols must be <pad> <s> </s>".into()));
        }
        if symbols.iter().any(|s| matches!(s, TargetSymbol::Pointer(_))) {
            return Err(SymtabError::Malformed("pointers are not listed as parse symbols".into()));
        }
        let index: HashMap<_, _> = symbols.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        if index.len() != symbols.len() {
            return Err(SymtabError::Malformed("duplicate symbols".into()));
        }
        Ok(SymbolTable {
            symbols,
            index,
            max_src_len,
        })
    }

    /// |V|: number of parse symbols, including PAD, BOS and EOS.
    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn max_src_len(&self) -> usize {
        self.max_src_len
    }

    /// |V| + max_src_len.
    pub fn total_size(&self) -> usize {
        self.symbols.len() + self.max_src_len
    }

    pub fn parse_symbols(&self) -> &[TargetSymbol] {
        &self.symbols
    }

    pub fn id(&self, sym: &TargetSymbol) -> Result<usize, SymtabError> {
        match sym {
            TargetSymbol::Pointer(i) if *i < self.max_src_len => Ok(self.symbols.len() + i),
            TargetSymbol::Pointer(_) => Err(SymtabError::UnknownSymbol(sym.to_string())),
            s => self
                .index
                .get(s)
                .copied()
                .ok_or_else(|| SymtabError::UnknownSymbol(s.to_string())),
        }
    }

    pub fn symbol(&self, id: usize) -> Result<TargetSymbol, SymtabError> {
        if id < self.symbols.len() {
            Ok(self.symbols[id].clone())
        } else if id < self.total_size() {
            Ok(TargetSymbol::Pointer(id - self.symbols.len()))
        } else {
            Err(SymtabError::UnknownId(id))
        }
    }

    pub fn is_pointer(&self, id: usize) -> bool {
        id >= self.symbols.len()
    }

    pub fn encode(&self, seq: &TargetSequence) -> Result<Vec<usize>, SymtabError> {
        seq.symbols().iter().map(|s| self.id(s)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<TargetSequence, SymtabError> {
        ids.iter().map(|&i| self.symbol(i)).collect::<Result<_, _>>().map(TargetSequence)
    }

    pub fn to_json(&self) -> String {
        let p = Persisted {
            symbols: self.symbols.iter().map(|s| s.to_string()).collect(),
            max_src_len: self.max_src_len,
        };
        serde_json::to_string_pretty(&p).expect("symbol table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SymtabError> {
        let p: Persisted = serde_json::from_str(s)?;
        Self::from_names(p.symbols, p.max_src_len)
    }

    pub fn save(&self, path: &Path) -> Result<(), SymtabError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SymtabError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub const UNK: usize = 1;

/// Source-side word ids: PAD, UNK, then observed tokens in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct PersistedSource {
    tokens: Vec<String>,
}

impl SourceVocab {
    pub fn build<'a, I, S>(queries: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut seen = BTreeSet::new();
        for q in queries {
            for t in q {
                seen.insert(t.as_ref().to_string());
            }
        }
        Self::from_tokens(seen.into_iter().collect())
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 2)).collect();
        SourceVocab { tokens, index }
    }

    /// Including PAD and UNK.
    pub fn size(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PersistedSource {
            tokens: self.tokens.clone(),
        })
        .expect("source vocabulary serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SymtabError> {
        let p: PersistedSource = serde_json::from_str(s)?;
        if p.tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SymtabError::Malformed("source tokens must be sorted and unique".into()));
        }
        Ok(Self::from_tokens(p.tokens))
    }

    pub fn save(&self, path: &Path) -> Result<(), SymtabError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SymtabError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
