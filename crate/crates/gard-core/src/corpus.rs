//! JSONL corpus files: one self-describing header line followed by one event
//! per line.
//!
//! ```text
//! {"schema":"gard-corpus/1","d":16,"classes":2}
//! {"event_id":"ev00000","label":0,"nodes":[{"t":0.0,"x":[...]}],"edges":[[0,1]]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EventGraph, GraphError};

pub const CORPUS_SCHEMA: &str = "gard-corpus/1";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unsupported schema {found:?}, expected {CORPUS_SCHEMA:?}")]
    UnknownSchema { line: usize, found: String },
    #[error("line {line}: event {event_id}: feature dimension {got} differs from corpus d={expected}")]
    InconsistentDim {
        line: usize,
        event_id: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: event {event_id}: label {label} out of range for {classes} classes")]
    LabelRange {
        line: usize,
        event_id: String,
        label: usize,
        classes: usize,
    },
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: GraphError,
    },
}

/// First line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub schema: String,
    pub d: usize,
    pub classes: usize,
}

/// A validated set of events sharing one feature dimension and label range.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub meta: CorpusMeta,
    pub events: Vec<EventGraph>,
}

impl Corpus {
    pub fn new(d: usize, classes: usize, events: Vec<EventGraph>) -> Self {
        Corpus {
            meta: CorpusMeta {
                schema: CORPUS_SCHEMA.to_string(),
                d,
                classes,
            },
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.events.iter().map(|e| e.label).collect()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read and validate a corpus. An empty file yields an empty corpus with
/// zeroed metadata.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);

    let mut meta: Option<CorpusMeta> = None;
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match &meta {
            None => {
                let parsed: CorpusMeta =
                    serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                if parsed.schema != CORPUS_SCHEMA {
                    return Err(CorpusError::UnknownSchema {
                        line: line_no,
                        found: parsed.schema,
                    });
                }
                meta = Some(parsed);
            }
            Some(meta) => {
                let mut event: EventGraph =
                    serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                event.feature_dim = meta.d;
                for (node_idx, node) in event.nodes.iter().enumerate() {
                    if node.feature.len() != meta.d {
                        return Err(CorpusError::InconsistentDim {
                            line: line_no,
                            event_id: event.event_id.clone(),
                            expected: meta.d,
                            got: node.feature.len(),
                        });
                    }
                    let _ = node_idx;
                }
                if event.label >= meta.classes {
                    return Err(CorpusError::LabelRange {
                        line: line_no,
                        event_id: event.event_id.clone(),
                        label: event.label,
                        classes: meta.classes,
                    });
                }
                event
                    .validate()
                    .map_err(|source| CorpusError::Validation { line: line_no, source })?;
                events.push(event);
            }
        }
    }
    let meta = meta.unwrap_or(CorpusMeta {
        schema: CORPUS_SCHEMA.to_string(),
        d: 0,
        classes: 0,
    });
    Ok(Corpus { meta, events })
}

/// Write the header line plus one compact JSON record per event.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    let header = serde_json::to_string(&corpus.meta).expect("meta serializes");
    writeln!(writer, "{header}").map_err(|e| io_err(path, e))?;
    for event in &corpus.events {
        let line = serde_json::to_string(event).expect("event serializes");
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}
