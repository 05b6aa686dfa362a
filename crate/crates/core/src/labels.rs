//! Gesture class labels and the closed registry that orders them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class names shipped by default, in canonical (lexicographic) order.
pub const HAND_HYGIENE_CLASSES: [&str; 3] = ["FingersInterlaced", "Linear", "Palm2Palm"];

/// A gesture class: its position in the registry and its canonical name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClassLabel {
    id: usize,
    name: String,
}

impl ClassLabel {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered, closed set of class labels. Ids are contiguous from 0 in
/// registry order and names are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelRegistry {
    labels: Vec<ClassLabel>,
}

impl LabelRegistry {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut labels: Vec<ClassLabel> = Vec::new();
        for (id, name) in names.into_iter().enumerate() {
            let name = name.into();
            if name.trim().is_empty() {
                return Err(Error::config(format!("label {id} has an empty name")));
            }
            if labels.iter().any(|l| l.name == name) {
                return Err(Error::config(format!("duplicate label {name:?}")));
            }
            labels.push(ClassLabel { id, name });
        }
        if labels.is_empty() {
            return Err(Error::config("label registry is empty"));
        }
        Ok(Self { labels })
    }

    /// The three hand-hygiene gestures: FingersInterlaced, Linear, Palm2Palm.
    pub fn hand_hygiene() -> Self {
        Self::new(HAND_HYGIENE_CLASSES).expect("built-in labels are valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&ClassLabel> {
        self.labels.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &ClassLabel> {
        self.labels.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn contains(&self, label: &ClassLabel) -> bool {
        self.labels.get(label.id) == Some(label)
    }
}

impl Default for LabelRegistry {
    fn default() -> Self {
        Self::hand_hygiene()
    }
}

impl TryFrom<Vec<String>> for LabelRegistry {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<LabelRegistry> for Vec<String> {
    fn from(registry: LabelRegistry) -> Self {
        registry.labels.into_iter().map(|l| l.name).collect()
    }
}
