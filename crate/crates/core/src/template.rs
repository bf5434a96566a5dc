//! Task templates: the ordered condition and target items of a task, each
//! naming a data item and the tokenizer that processes it.
//!
//! File syntax, one declaration per line, `#` comments allowed:
//!
//! ```text
//! task: asr
//! condition: wav codec_ssl
//! target: text bpe
//! ```

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerRegistry;
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemRole {
    Condition,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataItemSpec {
    pub item_name: String,
    pub tokenizer_name: String,
    pub role: ItemRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTemplate {
    pub task_name: String,
    pub conditions: Vec<DataItemSpec>,
    pub targets: Vec<DataItemSpec>,
}

impl TaskTemplate {
    /// Conditions first, then targets: the splice order of the training
    /// sequence.
    pub fn items(&self) -> impl Iterator<Item = &DataItemSpec> {
        self.conditions.iter().chain(self.targets.iter())
    }

    pub fn item(&self, name: &str) -> Option<&DataItemSpec> {
        self.items().find(|i| i.item_name == name)
    }

    /// Tokenizer names in declaration order, deduplicated.
    pub fn tokenizers_in_order(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for item in self.items() {
            if seen.insert(item.tokenizer_name.clone()) {
                out.push(item.tokenizer_name.clone());
            }
        }
        out
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let err = |msg: String| Error::Template {
            template: name.into(),
            msg,
        };
        if self.task_name.is_empty() {
            return Err(err("missing `task:` declaration".into()));
        }
        if self.conditions.is_empty() {
            return Err(err("a template needs at least one condition".into()));
        }
        if self.targets.is_empty() {
            return Err(err("a template needs at least one target".into()));
        }
        let mut seen = BTreeSet::new();
        for item in self.items() {
            if !seen.insert(item.item_name.clone()) {
                return Err(err(format!("duplicate item name '{}'", item.item_name)));
            }
        }
        Ok(())
    }

    /// Checks that every tokenizer the template names is trained.
    pub fn check_tokenizers(&self, registry: &TokenizerRegistry) -> Result<()> {
        for item in self.items() {
            if !registry.contains(&item.tokenizer_name) {
                return Err(Error::UnknownTokenizer(item.tokenizer_name.clone()));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, file: &str) -> Result<TaskTemplate> {
        let mut task_name = String::new();
        let mut conditions = Vec::new();
        let mut targets = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::ParseLine {
                file: file.into(),
                line: idx + 1,
                msg,
            };
            let (key, rest) = line
                .split_once(':')
                .ok_or_else(|| perr("expected `key: value`".into()))?;
            let rest = rest.trim();
            match key.trim() {
                "task" => {
                    if !task_name.is_empty() {
                        return Err(perr("duplicate `task:` declaration".into()));
                    }
                    if rest.is_empty() {
                        return Err(perr("empty task name".into()));
                    }
                    task_name = rest.to_string();
                }
                role @ ("condition" | "target") => {
                    let mut it = rest.split_whitespace();
                    let (Some(item), Some(tok), None) = (it.next(), it.next(), it.next()) else {
                        return Err(perr(format!("expected `{role}: <item> <tokenizer>`")));
                    };
                    let spec = DataItemSpec {
                        item_name: item.to_string(),
                        tokenizer_name: tok.to_string(),
                        role: if role == "condition" {
                            ItemRole::Condition
                        } else {
                            ItemRole::Target
                        },
                    };
                    if role == "condition" {
                        conditions.push(spec);
                    } else {
                        targets.push(spec);
                    }
                }
                other => return Err(perr(format!("unknown declaration `{other}:`"))),
            }
        }
        let t = TaskTemplate {
            task_name,
            conditions,
            targets,
        };
        t.validate(file)?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<TaskTemplate> {
        let text = util::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

pub fn parse_template_file(path: &Path) -> Result<TaskTemplate> {
    TaskTemplate::load(path)
}
