//! Streaming readers for StackExchange-style `Posts` dumps.
//!
//! Two container formats are accepted: the archive's row-per-record XML
//! (`<posts><row Id=".." .../></posts>`) and a line-delimited JSON file with
//! the same attribute names. Records are yielded one at a time.

use std::collections::HashMap;
use std::io::BufRead;
use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostType {
    Question,
    Answer,
    Other,
}

impl PostType {
    fn from_id(id: i64) -> Self {
        match id {
            1 => PostType::Question,
            2 => PostType::Answer,
            _ => PostType::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPost {
    pub id: u64,
    pub post_type: PostType,
    pub title: String,
    /// HTML body as stored in the dump.
    pub body: String,
    pub tags: Vec<String>,
    pub score: i64,
    pub closed: bool,
    pub creation_date: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpFormat {
    Xml,
    Jsonl,
}

impl DumpFormat {
    /// Guess from a file extension; XML unless it looks line-delimited.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") | Some("json") => DumpFormat::Jsonl,
            _ => DumpFormat::Xml,
        }
    }
}

impl FromStr for DumpFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xml" => Ok(DumpFormat::Xml),
            "jsonl" => Ok(DumpFormat::Jsonl),
            other => Err(Error::Config(format!("unknown dump format {other:?}"))),
        }
    }
}

/// Counters reported after a dump has been consumed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DumpStats {
    pub questions: usize,
    pub non_questions: usize,
    pub skipped_malformed: usize,
}

/// Parse the archive's tag field: `<c><pthreads>` or `|c|pthreads|`.
pub fn parse_tags(raw: &str) -> Vec<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Vec::new();
    }
    let parts: Vec<&str> = if raw.starts_with('<') {
        raw.split(['<', '>']).collect()
    } else {
        raw.split('|').collect()
    };
    parts
        .into_iter()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Build a post from its attribute map. `Err` carries the reason the record
/// is malformed; the caller decides whether to skip it.
fn post_from_attrs(attrs: &HashMap<String, String>) -> std::result::Result<RawPost, String> {
    let id = attrs
        .get("Id")
        .ok_or("missing Id")?
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("bad Id: {e}"))?;
    let post_type = attrs
        .get("PostTypeId")
        .ok_or("missing PostTypeId")?
        .trim()
        .parse::<i64>()
        .map_err(|e| format!("bad PostTypeId: {e}"))?;
    let score = match attrs.get("Score") {
        Some(s) => s.trim().parse::<i64>().map_err(|e| format!("bad Score: {e}"))?,
        None => 0,
    };
    Ok(RawPost {
        id,
        post_type: PostType::from_id(post_type),
        title: attrs.get("Title").cloned().unwrap_or_default(),
        body: attrs.get("Body").cloned().unwrap_or_default(),
        tags: attrs.get("Tags").map(|t| parse_tags(t)).unwrap_or_default(),
        score,
        closed: attrs.get("ClosedDate").is_some_and(|d| !d.trim().is_empty()),
        creation_date: attrs.get("CreationDate").cloned(),
    })
}

enum Source<R: BufRead> {
    Xml { reader: Reader<R>, buf: Vec<u8> },
    Jsonl { reader: R, line: String, lineno: usize, offset: u64 },
}

/// Iterator over the question records of a dump.
///
/// Yields `Err` only for container-level failures, after which iteration
/// stops. Malformed individual records are skipped and counted.
pub struct DumpReader<R: BufRead> {
    source: Source<R>,
    stats: DumpStats,
    done: bool,
}

/// Open a dump stream in the given format.
pub fn parse_dump<R: BufRead>(stream: R, format: DumpFormat) -> DumpReader<R> {
    let source = match format {
        DumpFormat::Xml => {
            let mut reader = Reader::from_reader(stream);
            reader.config_mut().trim_text(true);
            Source::Xml { reader, buf: Vec::new() }
        }
        DumpFormat::Jsonl => Source::Jsonl {
            reader: stream,
            line: String::new(),
            lineno: 0,
            offset: 0,
        },
    };
    DumpReader {
        source,
        stats: DumpStats::default(),
        done: false,
    }
}

impl<R: BufRead> DumpReader<R> {
    pub fn stats(&self) -> DumpStats {
        self.stats
    }

    fn route(&mut self, post: std::result::Result<RawPost, String>, at: String) -> Option<RawPost> {
        match post {
            Ok(post) if post.post_type == PostType::Question => {
                self.stats.questions += 1;
                Some(post)
            }
            Ok(_) => {
                self.stats.non_questions += 1;
                None
            }
            Err(reason) => {
                self.stats.skipped_malformed += 1;
                log::warn!("skipping malformed record at {at}: {reason}");
                None
            }
        }
    }

    fn next_xml(&mut self) -> Option<Result<RawPost>> {
        loop {
            let (reader, buf) = match &mut self.source {
                Source::Xml { reader, buf } => (reader, buf),
                Source::Jsonl { .. } => unreachable!(),
            };
            buf.clear();
            let event = reader.read_event_into(buf);
            let offset = reader.buffer_position();
            match event {
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::MalformedContainer {
                        offset: reader.error_position(),
                        message: e.to_string(),
                    }));
                }
                Ok(Event::Eof) => {
                    self.done = true;
                    return None;
                }
                Ok(Event::Empty(e)) | Ok(Event::Start(e)) if e.name().as_ref() == "row" => {
                    let mut attrs = HashMap::new();
                    let mut bad = None;
                    for attr in e.attributes() {
                        match attr {
                            Ok(a) => {
                                let key = a.key.as_ref().to_string();
                                match a.normalized_value(XmlVersion::Implicit1_0) {
                                    Ok(v) => {
                                        attrs.insert(key, v.into_owned());
                                    }
                                    Err(err) => {
                                        bad = Some(format!("attribute {key}: {err}"));
                                        break;
                                    }
                                }
                            }
                            Err(err) => {
                                bad = Some(format!("attribute syntax: {err}"));
                                break;
                            }
                        }
                    }
                    let post = match bad {
                        Some(reason) => Err(reason),
                        None => post_from_attrs(&attrs),
                    };
                    if let Some(post) = self.route(post, format!("byte {offset}")) {
                        return Some(Ok(post));
                    }
                }
                Ok(_) => {}
            }
        }
    }

    fn next_jsonl(&mut self) -> Option<Result<RawPost>> {
        loop {
            let (reader, line, lineno, offset) = match &mut self.source {
                Source::Jsonl { reader, line, lineno, offset } => (reader, line, lineno, offset),
                Source::Xml { .. } => unreachable!(),
            };
            line.clear();
            let start = *offset;
            match reader.read_line(line) {
                Err(e) => {
                    self.done = true;
                    return Some(Err(Error::MalformedContainer {
                        offset: start,
                        message: e.to_string(),
                    }));
                }
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(n) => {
                    *offset += n as u64;
                    *lineno += 1;
                }
            }
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let at = format!("line {lineno}");
            let post = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(trimmed)
                .map_err(|e| e.to_string())
                .map(|obj| {
                    obj.into_iter()
                        .filter_map(|(k, v)| {
                            let s = match v {
                                serde_json::Value::String(s) => s,
                                serde_json::Value::Number(n) => n.to_string(),
                                serde_json::Value::Bool(b) => b.to_string(),
                                serde_json::Value::Null => return None,
                                other => other.to_string(),
                            };
                            Some((k, s))
                        })
                        .collect::<HashMap<_, _>>()
                })
                .and_then(|attrs| post_from_attrs(&attrs));
            if let Some(post) = self.route(post, at) {
                return Some(Ok(post));
            }
        }
    }
}

impl<R: BufRead> Iterator for DumpReader<R> {
    type Item = Result<RawPost>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.source {
            Source::Xml { .. } => self.next_xml(),
            Source::Jsonl { .. } => self.next_jsonl(),
        }
    }
}
