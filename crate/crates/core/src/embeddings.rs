//! Word-vector loading and assembly of the label node matrix.
//!
//! Embedding files use the plain whitespace-delimited text layout: one token
//! per line followed by its coefficients. Labels may span several tokens
//! ("teddy bear"); such labels are embedded as the mean of their token vectors.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Ordered, de-duplicated list of class names. Index order is the class
/// index order used by every matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<String>,
}

fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl LabelVocabulary {
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut seen = HashMap::new();
        let mut out = Vec::with_capacity(labels.len());
        for (i, raw) in labels.iter().enumerate() {
            let label = normalize_label(raw.as_ref());
            if label.is_empty() {
                return Err(Error::Invalid(format!("label {i} is empty")));
            }
            if let Some(prev) = seen.insert(label.clone(), i) {
                return Err(Error::Invalid(format!(
                    "duplicate label `{label}` at positions {prev} and {i}"
                )));
            }
            out.push(label);
        }
        if out.is_empty() {
            return Err(Error::Invalid("label vocabulary is empty".into()));
        }
        Ok(LabelVocabulary { labels: out })
    }

    /// Reads a label file: one label per non-blank line.
    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        Self::new(&lines)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> &str {
        &self.labels[i]
    }
}

/// Token to vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    order: Vec<String>,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Tokens in file order.
    pub fn tokens(&self) -> &[String] {
        &self.order
    }

    /// Builds a table from in-memory entries; later duplicates are ignored.
    pub fn from_entries<S: AsRef<str>>(entries: &[(S, Vec<f64>)]) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Invalid("embedding table is empty".into()))?;
        let mut table = EmbeddingTable {
            dim,
            order: Vec::new(),
            entries: HashMap::new(),
        };
        for (i, (tok, v)) in entries.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {dim} coefficients, found {}", v.len()),
                });
            }
            table.insert(tok.as_ref().to_lowercase(), v.clone());
        }
        Ok(table)
    }

    fn insert(&mut self, token: String, v: Vec<f64>) {
        if !self.entries.contains_key(&token) {
            self.order.push(token.clone());
            self.entries.insert(token, v);
        }
    }

    /// Writes the table back out with 17 significant digits per coefficient.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.order {
            out.push_str(tok);
            for c in &self.entries[tok] {
                let _ = write!(out, " {c:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Parses an embedding text stream. The dimension is taken from the first
/// non-blank line; duplicate tokens keep their first occurrence.
pub fn parse_embedding_file<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let coeffs = parts
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("cannot parse coefficient `{s}`"),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if coeffs.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("token `{token}` has no coefficients"),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable {
            dim: coeffs.len(),
            order: Vec::new(),
            entries: HashMap::new(),
        });
        if coeffs.len() != t.dim {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} coefficients, found {}", t.dim, coeffs.len()),
            });
        }
        t.insert(token.to_lowercase(), coeffs);
    }
    table.ok_or(Error::Parse {
        line: 0,
        msg: "embedding stream is empty".into(),
    })
}

/// Vector for a (possibly multi-token) label: the unweighted mean of its
/// token vectors.
pub fn embed_label(label: &str, table: &EmbeddingTable) -> Result<Vec<f64>> {
    let tokens: Vec<String> = label.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::Invalid("cannot embed an empty label".into()));
    }
    let mut acc = vec![0.0; table.dim()];
    for tok in &tokens {
        let v = table
            .get(tok)
            .ok_or_else(|| Error::MissingToken(tok.clone()))?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let k = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// Label node representations, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    z: Matrix,
}

impl EmbeddingMatrix {
    /// Wraps a raw matrix, rejecting zero-norm rows.
    pub fn new(z: Matrix) -> Result<Self> {
        if let Some(i) = (0..z.rows()).find(|&i| row_norm(z.row(i)) == 0.0) {
            return Err(Error::DegenerateEmbedding {
                index: i,
                label: format!("#{i}"),
            });
        }
        Ok(EmbeddingMatrix { z })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }

    /// Number of labels.
    pub fn n(&self) -> usize {
        self.z.rows()
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.z.cols()
    }
}

pub(crate) fn row_norm(row: &[f64]) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn build_embedding_matrix(
    vocab: &LabelVocabulary,
    table: &EmbeddingTable,
) -> Result<EmbeddingMatrix> {
    let mut rows = Vec::with_capacity(vocab.len());
    for (i, label) in vocab.labels().iter().enumerate() {
        let v = embed_label(label, table)?;
        if row_norm(&v) == 0.0 {
            return Err(Error::DegenerateEmbedding {
                index: i,
                label: label.clone(),
            });
        }
        rows.push(v);
    }
    Ok(EmbeddingMatrix {
        z: Matrix::from_rows(&rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(text: &str) -> EmbeddingTable {
        parse_embedding_file(text.as_bytes()).unwrap()
    }

    #[test]
    fn parses_simple_file() {
        let t = table("cat 1.0 0.0\ndog 0.0 1.0");
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("dog"), Some(&[0.0, 1.0][..]));
    }

    #[test]
    fn ragged_line_reports_line_number() {
        match parse_embedding_file("cat 1.0\ndog 1.0 2.0".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line_number() {
        match parse_embedding_file("cat 1.0 0.0\n\ndog 1.0 x".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_embedding_file("".as_bytes()).is_err());
    }

    #[test]
    fn duplicates_keep_first() {
        let t = table("cat 1.0 0.0\ncat 9.0 9.0");
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("cat"), Some(&[1.0, 0.0][..]));
    }

    #[test]
    fn embed_single_and_multi_token() {
        let t = table("cat 1 0\nteddy 2 0\nbear 0 2\ncapacitor 1 1");
        assert_eq!(embed_label("cat", &t).unwrap(), vec![1.0, 0.0]);
        assert_eq!(embed_label("Teddy  Bear", &t).unwrap(), vec![1.0, 1.0]);
        match embed_label("flux capacitor", &t) {
            Err(Error::MissingToken(tok)) => assert_eq!(tok, "flux"),
            other => panic!("expected missing token, got {other:?}"),
        }
    }

    #[test]
    fn matrix_follows_vocab_order() {
        let t = table("cat 1 0\ndog 0 1\nnothing 0 0");
        let m =
            build_embedding_matrix(&LabelVocabulary::new(&["cat", "dog"]).unwrap(), &t).unwrap();
        assert_eq!(m.matrix().to_rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m =
            build_embedding_matrix(&LabelVocabulary::new(&["dog", "cat"]).unwrap(), &t).unwrap();
        assert_eq!(m.matrix().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let err = build_embedding_matrix(&LabelVocabulary::new(&["cat", "nothing"]).unwrap(), &t)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateEmbedding { index: 1, .. }));
    }

    #[test]
    fn vocabulary_rejects_duplicates_after_normalization() {
        assert!(LabelVocabulary::new(&["Cat", " cat "]).is_err());
        let v = LabelVocabulary::parse("Teddy Bear\n\nperson\n").unwrap();
        assert_eq!(
            v.labels(),
            &["teddy bear".to_string(), "person".to_string()]
        );
    }

    proptest! {
        #[test]
        fn text_round_trip_is_lossless(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..8)
        ) {
            let entries: Vec<(String, Vec<f64>)> =
                rows.iter().enumerate().map(|(i, r)| (format!("tok{i}"), r.clone())).collect();
            let t = EmbeddingTable::from_entries(&entries).unwrap();
            let back = parse_embedding_file(t.to_text().as_bytes()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn permuting_vocab_permutes_rows(perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
            let t = table("a 1 2\nb -1 0.5\nc 3 3\nd 0 -2");
            let names = ["a", "b", "c", "d"];
            let base = build_embedding_matrix(&LabelVocabulary::new(&names).unwrap(), &t).unwrap();
            let permuted: Vec<&str> = perm.iter().map(|&i| names[i]).collect();
            let m = build_embedding_matrix(&LabelVocabulary::new(&permuted).unwrap(), &t).unwrap();
            for (row, &src) in perm.iter().enumerate() {
                prop_assert_eq!(m.matrix().row(row), base.matrix().row(src));
            }
        }
    }
}
