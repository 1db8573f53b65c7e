use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::volume::atomic_write;
use crate::error::{Error, Result};
use crate::preprocess::ConfoundMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub token: String,
    pub onset: f64,
    pub offset: f64,
    pub surprisal: Option<f64>,
    pub probability: Option<f64>,
}

impl Word {
    /// Alignment timestamp of the word.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.onset + self.offset)
    }
}

/// Word-level stimulus table with non-decreasing onsets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordTable {
    rows: Vec<Word>,
}

impl WordTable {
    pub fn new(rows: Vec<Word>) -> Result<Self> {
        for (i, w) in rows.iter().enumerate() {
            if !(w.onset.is_finite() && w.offset.is_finite()) {
                return Err(Error::Parse {
                    line: i + 2,
                    reason: "non-finite timestamp".into(),
                });
            }
            if w.offset < w.onset {
                return Err(Error::NegativeDuration { row: i });
            }
            if i > 0 && w.onset < rows[i - 1].onset {
                return Err(Error::NonMonotoneOnsets { row: i });
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Word] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_surprisal(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|w| w.surprisal.is_some())
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        reason: format!("`{s}`: {e}"),
    })
}

fn optional_f64(s: &str, line: usize) -> Result<Option<f64>> {
    let t = s.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("n/a") || t.eq_ignore_ascii_case("nan") {
        Ok(None)
    } else {
        parse_f64(t, line).map(Some)
    }
}

struct Tsv {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_tsv(path: &Path) -> Result<Tsv> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, h)) => h.split('\t').map(|s| s.trim().to_owned()).collect(),
        None => Vec::new(),
    };
    let rows = lines
        .map(|(i, l)| (i + 1, l.split('\t').map(str::to_owned).collect()))
        .collect();
    Ok(Tsv { header, rows })
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

/// Read a tab-separated word table with columns `token`, `onset`, `offset`
/// and optional `surprisal` / `probability`.
pub fn read_word_table(path: impl AsRef<Path>) -> Result<WordTable> {
    let tsv = read_tsv(path.as_ref())?;
    let need = |name: &str| column(&tsv.header, name).ok_or(Error::MissingColumn(name.into()));
    let (ct, con, coff) = (need("token")?, need("onset")?, need("offset")?);
    let cs = column(&tsv.header, "surprisal");
    let cp = column(&tsv.header, "probability");
    let mut rows = Vec::with_capacity(tsv.rows.len());
    for (line, fields) in &tsv.rows {
        let get = |c: usize| fields.get(c).map(String::as_str).unwrap_or("");
        rows.push(Word {
            token: get(ct).to_owned(),
            onset: parse_f64(get(con), *line)?,
            offset: parse_f64(get(coff), *line)?,
            surprisal: match cs {
                Some(c) => optional_f64(get(c), *line)?,
                None => None,
            },
            probability: match cp {
                Some(c) => optional_f64(get(c), *line)?,
                None => None,
            },
        });
    }
    WordTable::new(rows)
}

pub fn write_word_table(table: &WordTable, path: impl AsRef<Path>) -> Result<()> {
    let with_s = table.rows.iter().any(|w| w.surprisal.is_some());
    let with_p = table.rows.iter().any(|w| w.probability.is_some());
    let mut out = String::from("token\tonset\toffset");
    if with_s {
        out.push_str("\tsurprisal");
    }
    if with_p {
        out.push_str("\tprobability");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| x.to_string());
    for w in &table.rows {
        out.push_str(&format!("{}\t{}\t{}", w.token, w.onset, w.offset));
        if with_s {
            out.push('\t');
            out.push_str(&opt(w.surprisal));
        }
        if with_p {
            out.push('\t');
            out.push_str(&opt(w.probability));
        }
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

/// Per-word embedding vectors, `n_words x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub data: DMatrix<f64>,
}

impl EmbeddingTable {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidArgument("embedding dim must be >= 1".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("embeddings"));
        }
        Ok(Self { data })
    }

    /// Check row alignment with a word table.
    pub fn check_aligned(&self, words: &WordTable) -> Result<()> {
        if self.data.nrows() != words.len() {
            return Err(Error::LengthMismatch(format!(
                "{} embedding rows for {} words",
                self.data.nrows(),
                words.len()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingSidecar {
    n_words: usize,
    dim: usize,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Embeddings as row-major little-endian f32 at `path` with a
/// `{n_words, dim}` sidecar at `path.json`.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let spath = sidecar(path);
    let text = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
    let meta: EmbeddingSidecar =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: spath.clone(),
            reason: e.to_string(),
        })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = (meta.n_words * meta.dim * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingTable::new(DMatrix::from_row_slice(meta.n_words, meta.dim, &values))
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut body = Vec::with_capacity(table.data.len() * 4);
    for i in 0..table.data.nrows() {
        for j in 0..table.data.ncols() {
            body.extend_from_slice(&(table.data[(i, j)] as f32).to_le_bytes());
        }
    }
    atomic_write(path, &body)?;
    let meta = EmbeddingSidecar {
        n_words: table.data.nrows(),
        dim: table.data.ncols(),
    };
    let spath = sidecar(path);
    let json = serde_json::to_string(&meta).map_err(|e| Error::json(&spath, e))?;
    atomic_write(&spath, json.as_bytes())
}

/// Confounds TSV; `n/a` cells (e.g. the first framewise-displacement
/// sample) read as 0.
pub fn read_confounds(path: impl AsRef<Path>) -> Result<ConfoundMatrix> {
    let tsv = read_tsv(path.as_ref())?;
    let ncol = tsv.header.len();
    let mut values = Vec::with_capacity(tsv.rows.len() * ncol);
    for (line, fields) in &tsv.rows {
        if fields.len() != ncol {
            return Err(Error::Parse {
                line: *line,
                reason: format!("{} fields, expected {ncol}", fields.len()),
            });
        }
        for f in fields {
            values.push(optional_f64(f, *line)?.unwrap_or(0.0));
        }
    }
    let data = DMatrix::from_row_slice(tsv.rows.len(), ncol, &values);
    ConfoundMatrix::new(data, tsv.header)
}

pub fn write_confounds(confounds: &ConfoundMatrix, path: impl AsRef<Path>) -> Result<()> {
    let m = confounds.data();
    let mut out = confounds.names().join("\t");
    out.push('\n');
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    atomic_write(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "w.tsv",
            "token\tonset\toffset\nthe\t0.1\t0.2\ncat\t0.5\t0.7\nsat\t0.9\t1.2\n",
        );
        let t = read_word_table(&p).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.rows().iter().all(|w| w.surprisal.is_none()));
        assert!(!t.has_surprisal());
    }

    #[test]
    fn decreasing_onsets_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "w.tsv",
            "token\tonset\toffset\na\t0.5\t0.6\nb\t0.1\t0.2\n",
        );
        assert!(matches!(
            read_word_table(&p),
            Err(Error::NonMonotoneOnsets { row: 1 })
        ));
    }

    #[test]
    fn negative_duration_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "w.tsv", "token\tonset\toffset\na\t0.5\t0.4\n");
        assert!(matches!(
            read_word_table(&p),
            Err(Error::NegativeDuration { row: 0 })
        ));
        let p = write(dir.path(), "w2.tsv", "token\tonset\na\t0.5\n");
        assert!(matches!(read_word_table(&p), Err(Error::MissingColumn(c)) if c == "offset"));
    }

    #[test]
    fn word_table_round_trip_with_surprisal() {
        let dir = tempfile::tempdir().unwrap();
        let t = WordTable::new(vec![
            Word {
                token: "a".into(),
                onset: 0.0,
                offset: 0.25,
                surprisal: Some(2.5),
                probability: None,
            },
            Word {
                token: "b".into(),
                onset: 0.3,
                offset: 0.5,
                surprisal: Some(0.125),
                probability: None,
            },
        ])
        .unwrap();
        let p = dir.path().join("w.tsv");
        write_word_table(&t, &p).unwrap();
        assert_eq!(read_word_table(&p).unwrap(), t);
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = EmbeddingTable::new(DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.5]))
            .unwrap();
        let p = dir.path().join("e.emb");
        write_embeddings(&e, &p).unwrap();
        assert_eq!(read_embeddings(&p).unwrap(), e);
    }
}
