use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Two-letter lowercase language code (`en`, `fa`, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LangCode(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid language code {0:?}: expected two lowercase ASCII letters")]
pub struct InvalidLangCode(pub String);

impl LangCode {
    pub fn new(code: &str) -> Result<Self, InvalidLangCode> {
        let valid = code.len() == 2 && code.bytes().all(|b| b.is_ascii_lowercase());
        if valid {
            Ok(LangCode(code.to_owned()))
        } else {
            Err(InvalidLangCode(code.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for LangCode {
    type Err = InvalidLangCode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LangCode::new(s)
    }
}

impl TryFrom<String> for LangCode {
    type Error = InvalidLangCode;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        LangCode::new(&s)
    }
}

impl From<LangCode> for String {
    fn from(code: LangCode) -> String {
        code.0
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
