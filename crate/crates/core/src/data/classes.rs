use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DataError, Result};

const FINE_CLASSES_JSON: &str = include_str!("../../data/fine_classes.json");

/// The five friction-only coarse classes, in label order.
pub const SIMPLE_CLASSES: [&str; 5] = ["dry", "wet", "water", "snow", "ice"];

/// Ordered class names plus an optional fine-to-coarse remap table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remap: Option<BTreeMap<String, String>>,
}

impl ClassMap {
    pub fn new(classes: Vec<String>) -> Result<Self> {
        let cm = Self { classes, remap: None };
        cm.validate()?;
        Ok(cm)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cm: Self = serde_json::from_str(text).map_err(|e| DataError::Format(e.to_string()))?;
        cm.validate()?;
        Ok(cm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("class map serializes")
    }

    /// The canonical 27 fine classes with their coarse remap table.
    pub fn fine() -> Self {
        Self::from_json(FINE_CLASSES_JSON).expect("bundled class list is valid")
    }

    /// The five coarse classes; fine names resolve through the bundled table.
    pub fn simple() -> Self {
        Self {
            classes: SIMPLE_CLASSES.iter().map(|s| s.to_string()).collect(),
            remap: Self::fine().remap,
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    /// Label of a directory name: a class name directly, else via the remap
    /// table.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        self.index(name).or_else(|| {
            let target = self.remap.as_ref()?.get(name)?;
            self.index(target)
        })
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for c in &self.classes {
            if !seen.insert(c) {
                problems.push(format!("duplicate class {c:?}"));
            }
        }
        if self.classes.is_empty() {
            problems.push("no classes".into());
        }
        if let Some(remap) = &self.remap {
            problems.extend(remap.keys().filter(|k| k.is_empty()).map(|_| "empty remap key".to_string()));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(DataError::Format(problems.join("; ")))
        }
    }
}

/// Friction token of a fine class name, with both snow kinds merged.
/// Tokens are separated by `-`, `_` being accepted as an alias.
pub fn remap_to_simple(name: &str) -> Result<String> {
    let lower = name.to_ascii_lowercase();
    let tokens: Vec<&str> = lower.split(['-', '_']).filter(|t| !t.is_empty()).collect();
    let mut found = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        let next = tokens.get(i + 1).copied();
        match *t {
            "dry" | "wet" | "water" | "ice" => found.push(t.to_string()),
            "fresh" | "melted" if next == Some("snow") => found.push("snow".into()),
            _ => {}
        }
    }
    match found.as_slice() {
        [one] => Ok(one.clone()),
        [] => Err(DataError::Remap(format!("{name:?} has no friction token"))),
        _ => Err(DataError::Remap(format!("{name:?} has several friction tokens"))),
    }
}
