use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{CorpusError, ProcessInstance, Result};
use crate::mrc::QUESTION_WORDS;

/// Sorted word list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words.into_iter().map(Into::into).collect();
        Self {
            words: set.into_iter().collect(),
        }
    }

    /// Paragraph tokens, entity tokens and the question template words.
    pub fn from_corpus<'a>(instances: impl IntoIterator<Item = &'a ProcessInstance>) -> Self {
        let mut words: BTreeSet<String> = QUESTION_WORDS.iter().map(|w| w.to_string()).collect();
        for inst in instances {
            words.extend(inst.tokens.iter().cloned());
            for e in &inst.entities {
                words.extend(e.tokens.iter().cloned());
            }
        }
        Self {
            words: words.into_iter().collect(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Hex SHA-256 over the newline-joined words.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Frozen word vectors. Row `len(vocab)` is the shared unknown vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    rows: Vec<f64>,
    known: Vec<bool>,
}

fn random_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-1.0..1.0) as f32 as f64).collect()
}

impl EmbeddingTable {
    fn assemble(vocab: &Vocab, dim: usize, mut row_for: impl FnMut(&str) -> Option<Vec<f64>>, unk: Vec<f64>) -> Self {
        let mut rows = Vec::with_capacity((vocab.len() + 1) * dim);
        let mut known = Vec::with_capacity(vocab.len() + 1);
        let mut index = HashMap::with_capacity(vocab.len());
        for (k, w) in vocab.words().iter().enumerate() {
            index.insert(w.clone(), k);
            match row_for(w) {
                Some(r) => {
                    rows.extend(r);
                    known.push(true);
                }
                None => {
                    rows.extend(unk.iter().copied());
                    known.push(false);
                }
            }
        }
        rows.extend(unk);
        known.push(false);
        Self {
            dim,
            index,
            rows,
            known,
        }
    }

    /// Independent random vectors for every word (for corpora without
    /// pretrained embeddings), plus a random unknown vector.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unk = random_row(&mut rng, dim);
        Self::assemble(vocab, dim, |_| Some(random_row(&mut rng, dim)), unk)
    }

    /// Rebuilds a table from its stored rows (`(len(vocab) + 1) x dim`).
    pub fn from_rows(vocab: &Vocab, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 || rows.len() != (vocab.len() + 1) * dim {
            return Err(CorpusError::Embedding {
                line: 0,
                msg: format!("{} values do not fit {} rows of width {dim}", rows.len(), vocab.len() + 1),
            });
        }
        let mut index = HashMap::new();
        for (k, w) in vocab.words().iter().enumerate() {
            index.insert(w.clone(), k);
        }
        let mut known = vec![true; vocab.len()];
        known.push(false);
        Ok(Self {
            dim,
            index,
            rows,
            known,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.known.len()
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn unknown(&self) -> &[f64] {
        let k = self.num_rows() - 1;
        &self.rows[k * self.dim..(k + 1) * self.dim]
    }

    /// Whether `word` received a vector of its own.
    pub fn contains(&self, word: &str) -> bool {
        self.index.get(word).is_some_and(|&k| self.known[k])
    }

    pub fn lookup(&self, word: &str) -> &[f64] {
        match self.index.get(word) {
            Some(&k) => &self.rows[k * self.dim..(k + 1) * self.dim],
            None => self.unknown(),
        }
    }
}

/// Reads a `word v1 ... vk` text table, keeping rows for words in `vocab`.
/// A two-integer header line (fastText `.vec` style) is skipped. Words
/// without a row share the unknown vector drawn from `seed`.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab, seed: u64) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path)?;
    let wanted: BTreeSet<&str> = vocab.words().iter().map(String::as_str).collect();
    let mut found: HashMap<String, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (k, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if k == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.is_empty() {
            return Err(CorpusError::Embedding {
                line: k + 1,
                msg: format!("`{word}` has no values"),
            });
        }
        match dim {
            None => dim = Some(rest.len()),
            Some(d) if d != rest.len() => {
                return Err(CorpusError::Embedding {
                    line: k + 1,
                    msg: format!("width {} differs from {d}", rest.len()),
                })
            }
            _ => {}
        }
        let lower = word.to_lowercase();
        if !wanted.contains(lower.as_str()) || found.contains_key(&lower) {
            continue;
        }
        let values = rest
            .iter()
            .map(|v| v.parse::<f64>().map(|x| x as f32 as f64))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Embedding {
                line: k + 1,
                msg: e.to_string(),
            })?;
        found.insert(lower, values);
    }
    let dim = dim.ok_or_else(|| CorpusError::Embedding {
        line: 0,
        msg: "no vectors in file".into(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unk = random_row(&mut rng, dim);
    Ok(EmbeddingTable::assemble(vocab, dim, |w| found.remove(w), unk))
}

/// Fraction of paragraph tokens without their own vector.
pub fn oov_rate(instances: &[ProcessInstance], table: &EmbeddingTable) -> f64 {
    let (mut total, mut missing) = (0usize, 0usize);
    for inst in instances {
        for t in &inst.tokens {
            total += 1;
            if !table.contains(t) {
                missing += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        missing as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_corpus;
    use std::io::Write;

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_vocab_has_only_unknown() {
        let f = write_tmp("leaf 1 2\nroot 3 4\n");
        let t = load_embeddings(f.path(), &Vocab::default(), 0).unwrap();
        assert_eq!(t.num_rows(), 1);
        assert_eq!(t.lookup("leaf"), t.unknown());
    }

    #[test]
    fn present_word_gets_exact_row() {
        let f = write_tmp("2 3\nleaf 0.5 -1.25 2\nroot 3 4 5\n");
        let vocab = Vocab::from_words(["leaf", "soil"]);
        let t = load_embeddings(f.path(), &vocab, 0).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("leaf"), &[0.5, -1.25, 2.0]);
        assert_eq!(t.lookup("soil"), t.unknown());
        assert_eq!(t.lookup("never-seen"), t.unknown());
        assert!(t.contains("leaf") && !t.contains("soil"));
    }

    #[test]
    fn inconsistent_widths_rejected() {
        let f = write_tmp("leaf 1 2\nroot 3 4 5\n");
        let err = load_embeddings(f.path(), &Vocab::from_words(["leaf"]), 0).unwrap_err();
        assert!(matches!(err, CorpusError::Embedding { line: 2, .. }));
    }

    #[test]
    fn oov_rate_matches_set_difference() {
        let corpus = synth_corpus(3, 8);
        let file_words = ["the", "water", "leaf", "moves", "to", ".", "root", "is"];
        let body: String = file_words.iter().map(|w| format!("{w} 0.1 0.2\n")).collect();
        let f = write_tmp(&body);
        let vocab = Vocab::from_corpus(&corpus);
        let table = load_embeddings(f.path(), &vocab, 1).unwrap();
        // oracle: count tokens outside the file's word set
        let in_file: BTreeSet<&str> = file_words.iter().copied().collect();
        let toks: Vec<&String> = corpus.iter().flat_map(|p| p.tokens.iter()).collect();
        let missing = toks.iter().filter(|t| !in_file.contains(t.as_str())).count();
        let want = missing as f64 / toks.len() as f64;
        assert_eq!(oov_rate(&corpus, &table), want);
        assert!(want > 0.0 && want < 1.0);
    }

    #[test]
    fn random_table_is_seeded_and_round_trips() {
        let vocab = Vocab::from_words(["a", "b"]);
        let t1 = EmbeddingTable::random(&vocab, 4, 9);
        assert_eq!(t1, EmbeddingTable::random(&vocab, 4, 9));
        let back = EmbeddingTable::from_rows(&vocab, 4, t1.rows().to_vec()).unwrap();
        assert_eq!(back.lookup("b"), t1.lookup("b"));
        assert_eq!(back.unknown(), t1.unknown());
        assert_eq!(vocab.hash(), Vocab::from_words(["b", "a"]).hash());
    }
}
