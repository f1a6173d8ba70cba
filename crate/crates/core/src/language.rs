//! Language codes recognized by the corpus loader.

use std::collections::BTreeSet;

/// Languages with whitespace-free orthography. Proportions over these are
/// measured in characters rather than tokens.
const UNSEGMENTED: &[&str] = &["zh", "ja", "th"];

/// Code of the bundled toy target language used by fixtures and the demo corpus.
pub const TOY_TARGET: &str = "qx";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageTable {
    codes: BTreeSet<String>,
}

impl Default for LanguageTable {
    fn default() -> Self {
        let codes = [
            "en", "ar", "bn", "de", "el", "es", "fi", "hi", "id", "ko", "ru", "sw", "te", "th",
            "tr", "vi", "zh", TOY_TARGET,
        ];
        Self {
            codes: codes.iter().map(|c| c.to_string()).collect(),
        }
    }
}

impl LanguageTable {
    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            codes: codes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(String::as_str)
    }
}

pub fn is_unsegmented(code: &str) -> bool {
    UNSEGMENTED.contains(&code)
}
