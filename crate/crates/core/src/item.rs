use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reference to one page of one book, written `title/page_index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemRef {
    pub title: String,
    pub page: u32,
}

impl ItemRef {
    pub fn new(title: impl Into<String>, page: u32) -> Self {
        Self { title: title.into(), page }
    }
}

impl fmt::Display for ItemRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.title, self.page)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("item ref {0:?} is not of the form title/page_index")]
pub struct BadItemRef(pub String);

impl FromStr for ItemRef {
    type Err = BadItemRef;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (title, page) = s.rsplit_once('/').ok_or_else(|| BadItemRef(s.to_string()))?;
        let page = page.parse().map_err(|_| BadItemRef(s.to_string()))?;
        if title.is_empty() {
            return Err(BadItemRef(s.to_string()));
        }
        Ok(Self { title: title.to_string(), page })
    }
}

impl Serialize for ItemRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_titles_containing_slashes() {
        let r: ItemRef = "a/b/12".parse().unwrap();
        assert_eq!(r, ItemRef::new("a/b", 12));
        assert_eq!(r.to_string(), "a/b/12");
        assert!("nopage".parse::<ItemRef>().is_err());
        assert!("/3".parse::<ItemRef>().is_err());
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"a/b/12\"");
    }
}
