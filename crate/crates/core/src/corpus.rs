//! Poem ingestion: normalization, structural validation, content-hash
//! identity, prompt construction and the JSONL corpus format.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("structure error{}: {reason}", context.as_ref().map(|c| format!(" in {c}")).unwrap_or_default())]
    Structure {
        reason: String,
        context: Option<String>,
    },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    fn structure(reason: impl Into<String>) -> Self {
        CorpusError::Structure {
            reason: reason.into(),
            context: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    Qilv,
    Ci,
}

impl Genre {
    /// Number of segments a valid poem of this genre has.
    pub fn segment_count(self) -> usize {
        match self {
            Genre::Qilv => QILV_COUPLETS,
            Genre::Ci => 2,
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Genre::Qilv => "Qilv",
            Genre::Ci => "Ci",
        })
    }
}

pub const QILV_CHARS: usize = 56;
pub const QILV_COUPLETS: usize = 4;

/// Half-open character range `[start, end)` into a poem's content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }
}

/// Lowercase hex SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoemId(String);

impl PoemId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Accepts only a 64-character lowercase hex string.
    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
            .then(|| PoemId(s.to_owned()))
    }
}

impl fmt::Display for PoemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn poem_id(content: &str) -> PoemId {
    PoemId(sha256_hex(content.as_bytes()))
}

/// Whether `c` belongs to the strip set: Unicode whitespace, ASCII
/// punctuation, CJK symbols and punctuation (U+3000..U+303F) and the
/// fullwidth punctuation ranges.
pub fn is_stripped(c: char) -> bool {
    c.is_whitespace()
        || c.is_ascii_punctuation()
        || matches!(c as u32,
            0x3000..=0x303F
            | 0xFF01..=0xFF0F
            | 0xFF1A..=0xFF20
            | 0xFF3B..=0xFF40
            | 0xFF5B..=0xFF65)
}

pub fn normalize_content(raw: &str) -> String {
    raw.chars().filter(|&c| !is_stripped(c)).collect()
}

/// Segment boundaries for normalized content. Lengths are counted in
/// Unicode scalar values.
pub fn validate_structure(
    content: &str,
    genre: Genre,
    section_break: Option<usize>,
) -> Result<Vec<Segment>, CorpusError> {
    let n = content.chars().count();
    match genre {
        Genre::Qilv => {
            if n != QILV_CHARS {
                return Err(CorpusError::structure(format!(
                    "Qilv content must have {QILV_CHARS} characters, found {n}"
                )));
            }
            let width = QILV_CHARS / QILV_COUPLETS;
            Ok((0..QILV_COUPLETS)
                .map(|i| Segment {
                    start: i * width,
                    end: (i + 1) * width,
                })
                .collect())
        }
        Genre::Ci => match section_break {
            Some(k) if k > 0 && k < n => Ok(vec![
                Segment { start: 0, end: k },
                Segment { start: k, end: n },
            ]),
            Some(k) => Err(CorpusError::structure(format!(
                "Ci section break {k} outside 1..{n}"
            ))),
            None => Err(CorpusError::structure("Ci poem needs a section break")),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poem {
    pub id: PoemId,
    pub genre: Genre,
    pub title: String,
    pub cipai: Option<String>,
    pub content: String,
    pub author: Option<String>,
    pub anthology_tags: BTreeSet<String>,
    pub segments: Vec<Segment>,
}

impl Poem {
    /// Normalizes `raw_content`, validates structure and derives the id.
    pub fn new(
        genre: Genre,
        title: impl Into<String>,
        cipai: Option<String>,
        raw_content: &str,
        author: Option<String>,
        tags: impl IntoIterator<Item = String>,
        section_break: Option<usize>,
    ) -> Result<Self, CorpusError> {
        let content = normalize_content(raw_content);
        let segments = validate_structure(&content, genre, section_break)?;
        if genre == Genre::Ci && cipai.as_deref().is_none_or(str::is_empty) {
            return Err(CorpusError::MissingField("cipai"));
        }
        Ok(Poem {
            id: poem_id(&content),
            genre,
            title: title.into(),
            cipai,
            content,
            author,
            anthology_tags: tags.into_iter().collect(),
            segments,
        })
    }

    pub fn char_len(&self) -> usize {
        self.content.chars().count()
    }

    fn section_break(&self) -> Option<usize> {
        (self.genre == Genre::Ci).then(|| self.segments[0].end)
    }
}

/// The model input that precedes the teacher-forced content.
pub fn build_prompt(poem: &Poem) -> Result<String, CorpusError> {
    match poem.genre {
        Genre::Qilv => Ok(format!("以《{}》为题写一首七言律诗：", poem.title)),
        Genre::Ci => {
            let cipai = poem
                .cipai
                .as_deref()
                .filter(|c| !c.is_empty())
                .ok_or(CorpusError::MissingField("cipai"))?;
            Ok(format!("以《{cipai}》为词牌名，以《{}》为题写一首词：", poem.title))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anthology {
    pub name: String,
    pub genre: Genre,
    pub poem_ids: Vec<PoemId>,
    pub description: String,
}

/// Anthology name for a tag within a genre, e.g. `Qilv/labelled_good`.
pub fn anthology_name(genre: Genre, tag: &str) -> String {
    format!("{genre}/{tag}")
}

/// One line of the corpus JSONL file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub genre: Genre,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cipai: Option<String>,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_break: Option<usize>,
}

/// Immutable validated corpus. Poems are kept in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    poems: Vec<Poem>,
    index: BTreeMap<PoemId, usize>,
    anthologies: BTreeMap<String, Anthology>,
}

impl Corpus {
    /// Deduplicates by id (tags unioned) and materializes one anthology per
    /// (genre, tag).
    pub fn from_poems(poems: impl IntoIterator<Item = Poem>) -> Self {
        let mut out: Vec<Poem> = Vec::new();
        let mut index = BTreeMap::new();
        for poem in poems {
            match index.get(&poem.id) {
                Some(&i) => {
                    let existing: &mut Poem = &mut out[i];
                    existing.anthology_tags.extend(poem.anthology_tags);
                }
                None => {
                    index.insert(poem.id.clone(), out.len());
                    out.push(poem);
                }
            }
        }
        let mut anthologies: BTreeMap<String, Anthology> = BTreeMap::new();
        for poem in &out {
            for tag in &poem.anthology_tags {
                let name = anthology_name(poem.genre, tag);
                anthologies
                    .entry(name.clone())
                    .or_insert_with(|| Anthology {
                        name,
                        genre: poem.genre,
                        poem_ids: Vec::new(),
                        description: format!("{} poems tagged {tag}", poem.genre),
                    })
                    .poem_ids
                    .push(poem.id.clone());
            }
        }
        Corpus {
            poems: out,
            index,
            anthologies,
        }
    }

    pub fn poems(&self) -> &[Poem] {
        &self.poems
    }

    pub fn len(&self) -> usize {
        self.poems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poems.is_empty()
    }

    pub fn get(&self, id: &PoemId) -> Option<&Poem> {
        self.index.get(id).map(|&i| &self.poems[i])
    }

    pub fn anthologies(&self) -> impl Iterator<Item = &Anthology> {
        self.anthologies.values()
    }

    pub fn anthology(&self, name: &str) -> Option<&Anthology> {
        self.anthologies.get(name)
    }

    pub fn anthology_poems<'a>(&'a self, anthology: &'a Anthology) -> impl Iterator<Item = &'a Poem> {
        anthology.poem_ids.iter().filter_map(|id| self.get(id))
    }

    pub fn to_records(&self) -> Vec<CorpusRecord> {
        self.poems
            .iter()
            .map(|p| CorpusRecord {
                genre: p.genre,
                title: p.title.clone(),
                cipai: p.cipai.clone(),
                content: p.content.clone(),
                author: p.author.clone(),
                tags: p.anthology_tags.iter().cloned().collect(),
                section_break: p.section_break(),
            })
            .collect()
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Poem, CorpusError> {
    let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
        line: lineno,
        message: e.to_string(),
    })?;
    let label = format!("line {lineno} ({})", rec.title);
    Poem::new(
        rec.genre,
        rec.title,
        rec.cipai,
        &rec.content,
        rec.author,
        rec.tags,
        rec.section_break,
    )
    .map_err(|e| match e {
        CorpusError::Structure { reason, .. } => CorpusError::Structure {
            reason,
            context: Some(label),
        },
        CorpusError::MissingField(field) => CorpusError::Parse {
            line: lineno,
            message: format!("missing field `{field}`"),
        },
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut poems = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        poems.push(parse_line(&line, lineno)?);
    }
    Ok(Corpus::from_poems(poems))
}

pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(std::io::BufReader::new(file))
}

pub fn write_corpus(corpus: &Corpus, mut out: impl Write) -> std::io::Result<()> {
    for rec in corpus.to_records() {
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_corpus(corpus, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}
