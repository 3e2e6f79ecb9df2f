//! Line-oriented corpus files: UTF-8, one sentence per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::types::{MonoCorpus, PairCorpus, Side, TokenSeq, TripleCorpus};
use super::vocab::Vocab;
use crate::error::{Error, Result};

/// Lines read from a corpus file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadLines {
    pub lines: Vec<String>,
    /// Blank (or whitespace-only) lines that were skipped.
    pub blank_dropped: usize,
}

/// Reads a corpus file. Trailing whitespace (including `\r`) is stripped
/// and blank lines are dropped; malformed UTF-8 fails with its line number.
pub fn read_lines(path: &Path) -> Result<ReadLines> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    let mut blank_dropped = 0;
    let mut chunks: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if chunks.last().is_some_and(|c| c.is_empty()) {
        chunks.pop();
    }
    for (i, raw) in chunks.into_iter().enumerate() {
        let text = std::str::from_utf8(raw).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("invalid UTF-8: {e}"),
        })?;
        let text = text.trim_end();
        if text.trim_start().is_empty() {
            blank_dropped += 1;
        } else {
            lines.push(text.to_string());
        }
    }
    Ok(ReadLines {
        lines,
        blank_dropped,
    })
}

pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = Vec::new();
    for l in lines {
        out.extend_from_slice(l.as_ref().as_bytes());
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads and encodes a monolingual corpus. Returns the corpus and the number
/// of blank lines dropped.
pub fn read_corpus(path: &Path, vocab: &Vocab, side: Side, domain: &str) -> Result<(MonoCorpus, usize)> {
    let read = read_lines(path)?;
    let sents = read
        .lines
        .iter()
        .map(|l| vocab.encode_sentence(l))
        .collect::<Result<Vec<_>>>()?;
    Ok((MonoCorpus::new(sents, side, domain), read.blank_dropped))
}

pub fn write_corpus(path: &Path, vocab: &Vocab, corpus: &MonoCorpus) -> Result<()> {
    write_seqs(path, vocab, corpus.sents())
}

pub fn write_seqs(path: &Path, vocab: &Vocab, sents: &[TokenSeq]) -> Result<()> {
    let lines: Vec<String> = sents.iter().map(|s| vocab.decode_sentence(s.ids())).collect();
    write_lines(path, &lines)
}

/// Writes `{stem}.src` / `{stem}.tgt`.
pub fn write_pairs(dir: &Path, stem: &str, vocab: &Vocab, pairs: &PairCorpus) -> Result<()> {
    write_seqs(&dir.join(format!("{stem}.src")), vocab, pairs.src())?;
    write_seqs(&dir.join(format!("{stem}.tgt")), vocab, pairs.tgt())
}

/// Writes the three parallel files `{stem}.draft`, `{stem}.mid`, `{stem}.ref`.
pub fn write_triples(dir: &Path, stem: &str, vocab: &Vocab, triples: &TripleCorpus) -> Result<()> {
    write_seqs(&dir.join(format!("{stem}.draft")), vocab, triples.draft())?;
    write_seqs(&dir.join(format!("{stem}.mid")), vocab, triples.mid())?;
    write_seqs(&dir.join(format!("{stem}.ref")), vocab, triples.reference())
}

pub fn read_triples(dir: &Path, stem: &str, vocab: &Vocab, side: super::types::RepairSide) -> Result<TripleCorpus> {
    let col = |ext: &str| -> Result<Vec<TokenSeq>> {
        read_lines(&dir.join(format!("{stem}.{ext}")))?
            .lines
            .iter()
            .map(|l| vocab.encode_sentence(l))
            .collect()
    };
    TripleCorpus::new(col("draft")?, col("mid")?, col("ref")?, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::RepairSide;
    use crate::corpus::vocab::build_vocab;

    #[test]
    fn three_line_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "a b\nc\nb a c\n").unwrap();
        let v = build_vocab([vec!["a b c"]]);
        let (c, blanks) = read_corpus(&p, &v, Side::Source, "B").unwrap();
        assert_eq!((c.len(), blanks), (3, 0));
        let q = dir.path().join("d.txt");
        write_corpus(&q, &v, &c).unwrap();
        assert_eq!(fs::read_to_string(&q).unwrap(), "a b\nc\nb a c\n");
        let (c2, _) = read_corpus(&q, &v, Side::Source, "B").unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn blank_lines_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        fs::write(&p, "a\n\nb  \n").unwrap();
        let r = read_lines(&p).unwrap();
        assert_eq!(r.lines, vec!["a", "b"]);
        assert_eq!(r.blank_dropped, 1);
    }

    #[test]
    fn crlf_matches_lf() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        fs::write(&a, "x y\nz\n").unwrap();
        fs::write(&b, "x y\r\nz\r\n").unwrap();
        assert_eq!(read_lines(&a).unwrap(), read_lines(&b).unwrap());
    }

    #[test]
    fn bad_utf8_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.txt");
        fs::write(&p, b"ok\nfine\n\xff\xfe\n").unwrap();
        match read_lines(&p) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn triple_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = build_vocab([vec!["a b c"]]);
        let s = |t: &str| v.encode_sentence(t).unwrap();
        let t = TripleCorpus::new(vec![s("a b")], vec![s("c")], vec![s("b a")], RepairSide::Source).unwrap();
        write_triples(dir.path(), "triples.src", &v, &t).unwrap();
        assert!(dir.path().join("triples.src.draft").exists());
        let back = read_triples(dir.path(), "triples.src", &v, RepairSide::Source).unwrap();
        assert_eq!(back, t);
    }
}
