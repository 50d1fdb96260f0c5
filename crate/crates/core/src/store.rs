//! Embedding sets, pair datasets and their on-disk formats.
//!
//! Embedding sets use the `EMBV1` binary layout:
//!
//! | bytes        | content                                             |
//! |--------------|-----------------------------------------------------|
//! | 0..6         | magic `EMBV1\0`                                     |
//! | 6..10        | `u32` LE row count                                  |
//! | 10..14       | `u32` LE dimension                                  |
//! | 14..22       | `u64` LE byte length `L` of the id block            |
//! | 22..22+L     | UTF-8 ids joined by `\n`, no trailing newline       |
//! | rest         | `count * dim` `f32` LE values, row-major            |
//!
//! Pair datasets and text corpora are JSON-lines files.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format, validation, Error, Result};

pub const EMBV1_MAGIC: &[u8; 6] = b"EMBV1\0";
pub const EMBV1_HEADER_LEN: usize = 22;

/// A matrix of `dim`-dimensional `f32` vectors keyed by unique string ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Builds a set from row-major `vectors`, checking every invariant.
    pub fn new(dim: usize, ids: Vec<String>, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(validation("embedding dimension must be positive"));
        }
        if vectors.len() != ids.len() * dim {
            return Err(validation(format!(
                "{} values do not form {} rows of dimension {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(validation(format!("row {i} has an empty id")));
            }
            if id.contains('\n') {
                return Err(validation(format!("id {id:?} contains a newline")));
            }
            if positions.insert(id.clone(), i).is_some() {
                return Err(validation(format!("duplicate id {id:?}")));
            }
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!(
                "non-finite value in row {} ({})",
                ids[pos / dim],
                vectors[pos]
            )));
        }
        Ok(Self {
            dim,
            ids,
            vectors,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    /// Row widened to `f64`, the precision used by all training math.
    pub fn row_f64(&self, index: usize) -> Vec<f64> {
        self.row(index).iter().map(|&v| f64::from(v)).collect()
    }

    /// Copies the named rows, in the given order, into a new set.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(ids.len() * self.dim);
        let mut out_ids = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let row = self
                .get(id)
                .ok_or_else(|| validation(format!("unknown id {id:?}")))?;
            vectors.extend_from_slice(row);
            out_ids.push(id.to_owned());
        }
        Self::new(self.dim, out_ids, vectors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id_block = self.ids.join("\n");
        let mut out =
            Vec::with_capacity(EMBV1_HEADER_LEN + id_block.len() + self.vectors.len() * 4);
        out.extend_from_slice(EMBV1_MAGIC);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(id_block.len() as u64).to_le_bytes());
        out.extend_from_slice(id_block.as_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < EMBV1_HEADER_LEN {
            return Err(format(format!(
                "file is {} bytes, shorter than the {EMBV1_HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..6] != EMBV1_MAGIC {
            return Err(format("bad magic, expected EMBV1"));
        }
        let count = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let id_len = u64::from_le_bytes(bytes[14..22].try_into().unwrap());
        if count == 0 || dim == 0 {
            return Err(format(format!(
                "count={count} dim={dim}, both must be positive"
            )));
        }
        let rest = &bytes[EMBV1_HEADER_LEN..];
        let id_len = usize::try_from(id_len)
            .ok()
            .filter(|&l| l <= rest.len())
            .ok_or_else(|| format("id block extends past end of file"))?;
        let (id_block, payload) = rest.split_at(id_len);
        let id_block =
            std::str::from_utf8(id_block).map_err(|e| format(format!("ids are not UTF-8: {e}")))?;
        let ids: Vec<String> = id_block.split('\n').map(str::to_owned).collect();
        if ids.len() != count {
            return Err(format(format!(
                "header declares {count} rows but id block holds {}",
                ids.len()
            )));
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format("payload size overflows"))?;
        if payload.len() != expected {
            return Err(format(format!(
                "payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let vectors = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, ids, vectors)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    EmbeddingSet::from_bytes(&fs::read(path)?)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, set.to_bytes())?;
    Ok(())
}

/// One labeled (anchor, candidate) example; label 1 marks a matching pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub anchor_id: String,
    pub candidate_id: String,
    pub label: u8,
}

impl PairExample {
    pub fn new(anchor_id: impl Into<String>, candidate_id: impl Into<String>, label: u8) -> Self {
        Self {
            anchor_id: anchor_id.into(),
            candidate_id: candidate_id.into(),
            label,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    id: String,
    text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairDataset {
    pub examples: Vec<PairExample>,
    /// id → raw text, needed only by the lexical baseline.
    pub raw_texts: Option<HashMap<String, String>>,
}

impl PairDataset {
    pub fn new(examples: Vec<PairExample>) -> Result<Self> {
        for (i, ex) in examples.iter().enumerate() {
            if ex.label > 1 {
                return Err(validation(format!(
                    "example {i} has label {}, expected 0 or 1",
                    ex.label
                )));
            }
        }
        Ok(Self {
            examples,
            raw_texts: None,
        })
    }

    pub fn with_texts(mut self, texts: HashMap<String, String>) -> Self {
        self.raw_texts = Some(texts);
        self
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &PairExample> {
        self.examples.iter().filter(|e| e.is_positive())
    }

    pub fn positive_count(&self) -> usize {
        self.positives().count()
    }

    /// Checks that every anchor id lives in `a` and every candidate id in `b`.
    pub fn validate_against(&self, a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if a.position(&ex.anchor_id).is_none() {
                return Err(validation(format!(
                    "example {i}: anchor id {:?} not in modality-A set",
                    ex.anchor_id
                )));
            }
            if b.position(&ex.candidate_id).is_none() {
                return Err(validation(format!(
                    "example {i}: candidate id {:?} not in modality-B set",
                    ex.candidate_id
                )));
            }
        }
        Ok(())
    }

    /// Holds out the last `n_holdout` positive pairs (in file order).
    ///
    /// The held-out part keeps every example whose anchor is a held-out
    /// anchor; the training part drops any example touching a held-out
    /// anchor or candidate.
    pub fn split_holdout(&self, n_holdout: usize) -> Result<(PairDataset, PairDataset)> {
        let positives: Vec<&PairExample> = self.positives().collect();
        if n_holdout >= positives.len() {
            return Err(validation(format!(
                "cannot hold out {n_holdout} of {} positive pairs",
                positives.len()
            )));
        }
        let held = &positives[positives.len() - n_holdout..];
        let anchors: HashSet<&str> = held.iter().map(|e| e.anchor_id.as_str()).collect();
        let candidates: HashSet<&str> = held.iter().map(|e| e.candidate_id.as_str()).collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for ex in &self.examples {
            if anchors.contains(ex.anchor_id.as_str()) {
                test.push(ex.clone());
            } else if !candidates.contains(ex.candidate_id.as_str()) {
                train.push(ex.clone());
            }
        }
        Ok((
            PairDataset {
                examples: train,
                raw_texts: self.raw_texts.clone(),
            },
            PairDataset {
                examples: test,
                raw_texts: self.raw_texts.clone(),
            },
        ))
    }
}

pub fn parse_pairs_jsonl(text: &str) -> Result<PairDataset> {
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: PairExample = serde_json::from_str(line)
            .map_err(|e| format(format!("pairs line {}: {e}", lineno + 1)))?;
        examples.push(ex);
    }
    PairDataset::new(examples)
}

pub fn read_pairs_jsonl(path: impl AsRef<Path>) -> Result<PairDataset> {
    parse_pairs_jsonl(&fs::read_to_string(path)?)
}

pub fn write_pairs_jsonl(data: &PairDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ex in &data.examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `{"id", "text"}` JSON-lines corpus.
pub fn read_corpus_jsonl(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut texts = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextRecord = serde_json::from_str(&line)
            .map_err(|e| format(format!("corpus line {}: {e}", lineno + 1)))?;
        if texts.insert(rec.id.clone(), rec.text).is_some() {
            return Err(validation(format!("duplicate corpus id {:?}", rec.id)));
        }
    }
    Ok(texts)
}

pub fn write_corpus_jsonl<'a, I>(records: I, path: impl AsRef<Path>) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, text) in records {
        serde_json::to_writer(
            &mut w,
            &TextRecord {
                id: id.to_owned(),
                text: text.to_owned(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush().map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rows() -> EmbeddingSet {
        EmbeddingSet::new(
            3,
            vec!["a".into(), "b".into()],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_small_set() {
        let set = two_rows();
        let back = EmbeddingSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.ids(), ["a", "b"]);
    }

    #[test]
    fn single_zero_row_768() {
        let set = EmbeddingSet::new(768, vec!["z".into()], vec![0.0; 768]).unwrap();
        let back = EmbeddingSet::from_bytes(&set.to_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = two_rows().to_bytes();
        assert_eq!(&bytes[..6], b"EMBV1\0");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        assert_eq!(&bytes[22..25], b"a\nb");
        assert_eq!(bytes.len(), 22 + 3 + 6 * 4);
        assert_eq!(&bytes[25..29], &1.0f32.to_le_bytes());
    }

    #[test]
    fn file_size_for_full_size_set() {
        let ids: Vec<String> = (0..1000).map(|i| format!("q{i:04}")).collect();
        let id_block = ids.join("\n").len();
        let set = EmbeddingSet::new(768, ids, vec![0.25; 1000 * 768]).unwrap();
        assert_eq!(set.to_bytes().len(), 22 + id_block + 1000 * 768 * 4);
        assert_eq!(id_block, 1000 * 5 + 999);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = two_rows().to_bytes();
        for cut in [bytes.len() - 1, bytes.len() - 4, 24, 10] {
            assert!(matches!(
                EmbeddingSet::from_bytes(&bytes[..cut]),
                Err(Error::Format(_))
            ));
        }
    }

    #[test]
    fn rejects_bad_magic_and_zero_sizes() {
        let mut bytes = two_rows().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingSet::from_bytes(&bytes),
            Err(Error::Format(_))
        ));

        let mut zero_dim = two_rows().to_bytes();
        zero_dim[10..14].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::from_bytes(&zero_dim),
            Err(Error::Format(_))
        ));

        let mut zero_count = two_rows().to_bytes();
        zero_count[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::from_bytes(&zero_count),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn duplicate_ids_and_nan_are_validation_errors() {
        let mut bytes = two_rows().to_bytes();
        bytes[24] = b'a';
        assert!(matches!(
            EmbeddingSet::from_bytes(&bytes),
            Err(Error::Validation(_))
        ));

        let mut nan = two_rows().to_bytes();
        nan[25..29].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingSet::from_bytes(&nan),
            Err(Error::Validation(_))
        ));

        assert!(EmbeddingSet::new(1, vec!["x".into()], vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn save_rejects_nothing_invalid_because_construction_already_did() {
        // A NaN set cannot be built, so it can never reach the writer.
        let err = EmbeddingSet::new(2, vec!["x".into()], vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let err = save_embeddings(&two_rows(), "/nonexistent-dir/x.embv").unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn pairs_jsonl_round_trip_and_label_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let data = PairDataset::new(vec![
            PairExample::new("a", "b", 1),
            PairExample::new("a", "c", 0),
        ])
        .unwrap();
        write_pairs_jsonl(&data, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"anchor_id":"a","candidate_id":"b","label":1}"#
        );
        assert_eq!(read_pairs_jsonl(&path).unwrap(), data);

        assert!(parse_pairs_jsonl(r#"{"anchor_id":"a","candidate_id":"b","label":2}"#).is_err());
        assert!(matches!(
            parse_pairs_jsonl("{not json"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("texts.jsonl");
        write_corpus_jsonl([("d1", "the cat sat"), ("d2", "le chat")], &path).unwrap();
        let texts = read_corpus_jsonl(&path).unwrap();
        assert_eq!(texts["d1"], "the cat sat");
        assert_eq!(texts.len(), 2);
    }

    #[test]
    fn holdout_split_separates_ids() {
        let mut ex = Vec::new();
        for i in 0..5 {
            ex.push(PairExample::new(format!("a{i}"), format!("b{i}"), 1));
            ex.push(PairExample::new(
                format!("a{i}"),
                format!("b{}", (i + 1) % 5),
                0,
            ));
        }
        let data = PairDataset::new(ex).unwrap();
        let (train, test) = data.split_holdout(2).unwrap();
        assert_eq!(test.positive_count(), 2);
        assert_eq!(train.positive_count(), 3);
        for e in &train.examples {
            assert!(!["a3", "a4"].contains(&e.anchor_id.as_str()));
            assert!(!["b3", "b4"].contains(&e.candidate_id.as_str()));
        }
        assert!(data.split_holdout(5).is_err());
    }
}
