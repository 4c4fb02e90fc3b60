use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::neural::Tensor;

/// Half-width of the uniform range for rows not covered by a vector file.
pub const RANDOM_ROW_BOUND: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    File { coverage: usize },
    Random { seed: u64 },
}

/// `vocab_size × dim` word-embedding matrix; the PAD row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: Tensor,
    pub source: EmbeddingSource,
}

impl EmbeddingTable {
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Tensor::zeros(&[vocab_size, dim]);
        for (i, v) in table.data_mut().iter_mut().enumerate() {
            let x = rng.gen_range(-RANDOM_ROW_BOUND..=RANDOM_ROW_BOUND);
            if i / dim != PAD {
                *v = x;
            }
        }
        Self {
            table,
            source: EmbeddingSource::Random { seed },
        }
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    pub fn coverage(&self) -> usize {
        match self.source {
            EmbeddingSource::File { coverage } => coverage,
            EmbeddingSource::Random { .. } => 0,
        }
    }
}

/// Parses a whitespace-separated word-vector file (`token v1 … v_dim` per
/// line). Rows of vocabulary tokens found in the file are copied; the rest
/// keep their seeded random initialisation.
pub fn parse_word_vectors(
    text: &str,
    source: &str,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let mut emb = EmbeddingTable::random(vocab.len(), dim, seed);
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().expect("nonempty line");
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::parse(source, format!("line {}", n + 1), format!("bad value `{f}`"))
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                source,
                format!("line {}", n + 1),
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if !vocab.contains(token) || vocab.id(token) == PAD {
            continue;
        }
        let id = vocab.id(token);
        if seen.insert(id) {
            emb.table.row_mut(id).copy_from_slice(&values);
        }
    }
    emb.source = EmbeddingSource::File {
        coverage: seen.len(),
    };
    Ok(emb)
}

pub fn load_word_vectors(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text, &path.display().to_string(), vocab, dim, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        let corpus = [vec!["cat".to_string(), "dog".to_string()]];
        Vocabulary::build(corpus.iter().map(Vec::as_slice), 1).unwrap()
    }

    #[test]
    fn partial_coverage() {
        let v = vocab();
        let e = parse_word_vectors("cat 0.1 0.2 0.3\nbird 1 1 1\n", "mem", &v, 3, 4).unwrap();
        assert_eq!(e.coverage(), 1);
        assert_eq!(e.table.row(v.id("cat")), &[0.1, 0.2, 0.3]);
        let dog = e.table.row(v.id("dog"));
        assert!(dog.iter().all(|x| x.abs() <= RANDOM_ROW_BOUND));
        assert_eq!(dog, EmbeddingTable::random(v.len(), 3, 4).table.row(v.id("dog")));
        assert!(e.table.row(PAD).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_arity_reports_line() {
        let err = parse_word_vectors("cat 0.1 0.2", "vecs.txt", &vocab(), 3, 0).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 1"),
            other => panic!("{other}"),
        }
        assert!(parse_word_vectors("cat 0.1 x 0.3", "v", &vocab(), 3, 0).is_err());
    }

    #[test]
    fn empty_file_is_all_random() {
        let v = vocab();
        let e = parse_word_vectors("", "mem", &v, 5, 9).unwrap();
        assert_eq!(e.coverage(), 0);
        assert_eq!(e.table, EmbeddingTable::random(v.len(), 5, 9).table);
        assert!(e.table.row(PAD).iter().all(|&x| x == 0.0));
        assert!(e.table.row(v.id("cat")).iter().any(|&x| x != 0.0));
    }
}
