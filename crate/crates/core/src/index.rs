//! Index files: one line per example, `example-id content`.
//!
//! The first whitespace run separates the id from the content; the content
//! may itself contain spaces (inline text) or be a path (audio items).

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub example_id: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexFile {
    pub item_name: String,
    pub entries: Vec<IndexEntry>,
}

impl IndexFile {
    pub fn new(item_name: impl Into<String>) -> Self {
        IndexFile {
            item_name: item_name.into(),
            entries: Vec::new(),
        }
    }

    pub fn parse(text: &str, item_name: &str, file: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, line) in text.lines().enumerate() {
            let mut parts = line.splitn(2, char::is_whitespace);
            let id = parts.next().unwrap_or("");
            let content = parts.next().map(str::trim_start);
            // Content may be empty (after the separator) but the separator
            // itself is mandatory.
            let (id, content) = match (id, content) {
                ("", _) | (_, None) => {
                    return Err(Error::ParseLine {
                        file: file.into(),
                        line: idx + 1,
                        msg: "expected `example-id content`".into(),
                    });
                }
                (id, Some(content)) => (id, content),
            };
            if !seen.insert(id.to_string()) {
                return Err(Error::ParseLine {
                    file: file.into(),
                    line: idx + 1,
                    msg: format!("duplicate example id '{id}'"),
                });
            }
            entries.push(IndexEntry {
                example_id: id.to_string(),
                content: content.to_string(),
            });
        }
        Ok(IndexFile {
            item_name: item_name.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path, item_name: &str) -> Result<Self> {
        let text = util::read_to_string(path)?;
        Self::parse(&text, item_name, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.example_id);
            out.push(' ');
            out.push_str(&e.content);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_if_changed(path, self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.example_id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.example_id == id)
            .map(|e| e.content.as_str())
    }
}
