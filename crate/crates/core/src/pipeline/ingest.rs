//! Corpus readers.
//!
//! Two layouts are accepted: a TSV file with `source<TAB>target` per line, and
//! a Moses-style pair of line-aligned files. Records get sequential ids in
//! file order. Malformed lines are counted and skipped; invalid UTF-8 and
//! misaligned file pairs are errors.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::PairRecord;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv { path: PathBuf },
    Moses { src: PathBuf, trg: PathBuf },
}

/// Counts lines that could not be turned into records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub records: u64,
    pub skipped: u64,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::UnreadableFile {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

/// Reads one line as raw bytes; `None` at EOF. Strips `\n` / `\r\n`.
fn next_line(reader: &mut impl BufRead, path: &Path, line_no: usize) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::UnreadableFile {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    }
    String::from_utf8(buf).map(Some).map_err(|_| Error::EncodingError {
        path: path.to_owned(),
        line: line_no,
    })
}

/// Streaming reader over `source<TAB>target` lines.
pub struct TsvReader<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    stats: IngestStats,
    failed: bool,
}

impl TsvReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::new(open(path)?, path))
    }
}

impl<R: BufRead> TsvReader<R> {
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Self {
        TsvReader {
            reader,
            path: path.into(),
            line_no: 0,
            stats: IngestStats::default(),
            failed: false,
        }
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }
}

impl<R: BufRead> Iterator for TsvReader<R> {
    type Item = Result<PairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.line_no += 1;
            let line = match next_line(&mut self.reader, &self.path, self.line_no) {
                Ok(Some(line)) => line,
                Ok(None) => return None,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            };
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(src), Some(trg), None) if !src.trim().is_empty() && !trg.trim().is_empty() => {
                    let record = PairRecord::new(self.stats.records, src, trg);
                    self.stats.records += 1;
                    return Some(Ok(record));
                }
                _ => self.stats.skipped += 1,
            }
        }
    }
}

/// Streaming reader over two line-aligned files.
pub struct MosesReader<R> {
    src: R,
    trg: R,
    src_path: PathBuf,
    trg_path: PathBuf,
    line_no: usize,
    stats: IngestStats,
    failed: bool,
}

impl MosesReader<BufReader<File>> {
    pub fn open(src: impl AsRef<Path>, trg: impl AsRef<Path>) -> Result<Self> {
        let (src, trg) = (src.as_ref(), trg.as_ref());
        Ok(MosesReader {
            src: open(src)?,
            trg: open(trg)?,
            src_path: src.to_owned(),
            trg_path: trg.to_owned(),
            line_no: 0,
            stats: IngestStats::default(),
            failed: false,
        })
    }
}

impl<R: BufRead> MosesReader<R> {
    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn fail(&mut self, e: Error) -> Option<Result<PairRecord>> {
        self.failed = true;
        Some(Err(e))
    }
}

impl<R: BufRead> Iterator for MosesReader<R> {
    type Item = Result<PairRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.line_no += 1;
            let src = match next_line(&mut self.src, &self.src_path, self.line_no) {
                Ok(l) => l,
                Err(e) => return self.fail(e),
            };
            let trg = match next_line(&mut self.trg, &self.trg_path, self.line_no) {
                Ok(l) => l,
                Err(e) => return self.fail(e),
            };
            match (src, trg) {
                (None, None) => return None,
                (Some(s), Some(t)) => {
                    if s.trim().is_empty() || t.trim().is_empty() {
                        self.stats.skipped += 1;
                        continue;
                    }
                    let record = PairRecord::new(self.stats.records, s, t);
                    self.stats.records += 1;
                    return Some(Ok(record));
                }
                (src, _) => {
                    let (longer, shorter) = if src.is_some() {
                        (&self.src_path, &self.trg_path)
                    } else {
                        (&self.trg_path, &self.src_path)
                    };
                    let reason = format!(
                        "aligned files differ in length: {} ends after {} lines but {} continues",
                        shorter.display(),
                        self.line_no - 1,
                        longer.display()
                    );
                    let path = shorter.clone();
                    return self.fail(Error::UnreadableFile { path, reason });
                }
            }
        }
    }
}

/// Fully loaded corpus plus reader statistics.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub records: Vec<PairRecord>,
    pub stats: IngestStats,
}

/// Loads a corpus in either layout.
pub fn ingest_corpus(format: &CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Tsv { path } => {
            let mut reader = TsvReader::open(path)?;
            let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
            Ok(Corpus {
                records,
                stats: reader.stats(),
            })
        }
        CorpusFormat::Moses { src, trg } => {
            let mut reader = MosesReader::open(src, trg)?;
            let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
            Ok(Corpus {
                records,
                stats: reader.stats(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn three_line_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", b"a\tA\nb\tB\r\nc\tC");
        let c = ingest_corpus(&CorpusFormat::Tsv { path: p }).unwrap();
        assert_eq!(c.records.len(), 3);
        assert_eq!(c.records.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(c.records[1].trg_text, "B");
        assert_eq!(c.stats.skipped, 0);
    }

    #[test]
    fn malformed_lines_are_skipped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", b"a\tA\nno tab here\nb\tB\n");
        let c = ingest_corpus(&CorpusFormat::Tsv { path: p }).unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.stats.skipped, 1);
        assert_eq!(c.records[1].id, 1);
    }

    #[test]
    fn non_utf8_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.tsv", b"a\tA\n\xff\xfe\tB\n");
        assert!(matches!(
            ingest_corpus(&CorpusFormat::Tsv { path: p }),
            Err(Error::EncodingError { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            ingest_corpus(&CorpusFormat::Tsv {
                path: "/nonexistent/x.tsv".into()
            }),
            Err(Error::UnreadableFile { .. })
        ));
    }

    #[test]
    fn moses_pair() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(dir.path(), "c.en", b"one\ntwo\n");
        let trg = write(dir.path(), "c.fa", b"yek\ndo\n");
        let c = ingest_corpus(&CorpusFormat::Moses { src, trg }).unwrap();
        assert_eq!(c.records.len(), 2);
        assert_eq!(c.records[1].src_text, "two");
        assert_eq!(c.records[1].trg_text, "do");
    }

    #[test]
    fn moses_unequal_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let src = write(dir.path(), "c.en", b"one\ntwo\nthree\n");
        let trg = write(dir.path(), "c.fa", b"yek\ndo\n");
        let err = ingest_corpus(&CorpusFormat::Moses { src, trg }).unwrap_err();
        match err {
            Error::UnreadableFile { reason, .. } => assert!(reason.contains("differ in length"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
