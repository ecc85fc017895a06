use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Reserved name of the prediction network's start symbol.
pub const SOS: &str = "<sos>";

/// Ordered output units. Index 0 is blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// `tokens[0]` names blank; the rest are the output units.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Config("vocabulary needs blank plus at least one unit".into()));
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("vocabulary entry {i} is empty or contains whitespace")));
            }
            if t == SOS {
                return Err(Error::Config(format!("{SOS} is reserved")));
            }
            if tokens[..i].contains(t) {
                return Err(Error::Config(format!("duplicate vocabulary entry {t}")));
            }
        }
        Ok(Self { tokens })
    }

    /// Parses one token per line; line 0 is blank. Trailing empty lines are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        while lines.last().is_some_and(|l| l.is_empty()) {
            lines.pop();
        }
        Self::new(lines)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// `<blank>`, `t1`, …, `tN`.
    pub fn synthetic(units: usize) -> Self {
        let mut tokens = alloc::vec!["<blank>".to_string()];
        tokens.extend((1..=units).map(|i| format!("t{i}")));
        Self { tokens }
    }

    /// Number of output units `|Y|`.
    pub fn units(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Maps unit ids to strings; blank or unknown ids are errors.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>> {
        ids.iter()
            .map(|&i| match i {
                0 => Err(Error::Contract("blank cannot appear in a transcript".into())),
                _ => self.token(i).ok_or_else(|| Error::Contract(format!("unit id {i} out of range"))),
            })
            .collect()
    }

    /// Maps a whitespace-separated transcript to unit ids.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| match self.id(w) {
                Some(0) | None => Err(Error::Contract(format!("unknown or blank unit {w:?} in transcript"))),
                Some(i) => Ok(i),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let v = Vocabulary::parse("<b>\nhello\nworld\n\n").unwrap();
        assert_eq!(v.units(), 2);
        assert_eq!(v.encode("world hello").unwrap(), [2, 1]);
        assert_eq!(v.decode(&[1, 2]).unwrap(), ["hello", "world"]);
        assert_eq!(Vocabulary::parse(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn rejects_bad_vocabularies() {
        assert!(Vocabulary::parse("<b>\n").is_err());
        assert!(Vocabulary::parse("<b>\na\na\n").is_err());
        assert!(Vocabulary::parse("<b>\n<sos>\n").is_err());
        let v = Vocabulary::synthetic(3);
        assert!(v.decode(&[0]).is_err());
        assert!(v.encode("<blank>").is_err());
        assert!(v.encode("t9").is_err());
    }
}
