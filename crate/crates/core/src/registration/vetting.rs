use std::collections::BTreeSet;

use thiserror::Error;

use crate::crypto::PublicKey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("vetting list line {line}: {reason}")]
pub struct VettingParseError {
    pub line: usize,
    pub reason: String,
}

/// Allow-list of genuine package signing keys.
///
/// File format: one hex-encoded public key per line; `#` starts a comment
/// that runs to end of line; blank lines are ignored.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VettingList {
    keys: BTreeSet<PublicKey>,
}

impl VettingList {
    pub fn from_keys(keys: impl IntoIterator<Item = PublicKey>) -> Self {
        Self {
            keys: keys.into_iter().collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, VettingParseError> {
        let mut keys = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let key = PublicKey::from_hex(line).ok_or_else(|| VettingParseError {
                line: idx + 1,
                reason: format!("expected 64 hex digits, got {:?}", truncate(line)),
            })?;
            keys.insert(key);
        }
        Ok(Self { keys })
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# vetted package signing keys\n");
        for k in &self.keys {
            out.push_str(&k.to_hex());
            out.push('\n');
        }
        out
    }

    pub fn contains(&self, key: &PublicKey) -> bool {
        self.keys.contains(key)
    }

    pub fn insert(&mut self, key: PublicKey) {
        self.keys.insert(key);
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(24).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let k = "11".repeat(32);
        let text = format!("# header\n\n{k}  # socket 0\n   \n{}\n", "22".repeat(32));
        let list = VettingList::parse(&text).unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.contains(&PublicKey([0x11; 32])));
        assert_eq!(VettingList::parse(&list.render()).unwrap(), list);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = VettingList::parse("# ok\nnot-hex\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(VettingList::parse(&"ab".repeat(31)).is_err());
    }
}
