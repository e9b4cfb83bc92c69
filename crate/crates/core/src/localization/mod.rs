//! Per-client translation of user-facing text. Language is a local
//! preference and never part of shared session state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The en/ja table shipped with the application.
pub const BUNDLED_TABLE: &str = include_str!("../../assets/strings.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageCode([u8; 2]);

impl LanguageCode {
    pub const EN: LanguageCode = LanguageCode(*b"en");
    pub const JA: LanguageCode = LanguageCode(*b"ja");

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl FromStr for LanguageCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.as_bytes() {
            &[a, b] if a.is_ascii_lowercase() && b.is_ascii_lowercase() => Ok(LanguageCode([a, b])),
            _ => Err(format!("`{s}` is not a two-letter lowercase language code")),
        }
    }
}

impl TryFrom<String> for LanguageCode {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<LanguageCode> for String {
    fn from(code: LanguageCode) -> Self {
        code.as_str().to_string()
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("line {line}: expected `key<TAB>lang<TAB>text`")]
    MalformedLine { line: usize },
    #[error("line {line}: invalid key `{key}`")]
    InvalidKey { line: usize, key: String },
    #[error("line {line}: {reason}")]
    InvalidLanguage { line: usize, reason: String },
    #[error("line {line}: duplicate entry for ({key}, {lang})")]
    DuplicateEntry { line: usize, key: String, lang: LanguageCode },
}

/// Keys are dot-separated ASCII identifiers such as `menu.export`.
pub fn is_valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .split('.')
            .all(|part| !part.is_empty() && part.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_'))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TranslationTable {
    entries: BTreeMap<(String, LanguageCode), String>,
    languages: BTreeSet<LanguageCode>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    MissingTranslation { key: String, lang: LanguageCode },
}

impl TranslationTable {
    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut table = TranslationTable::default();
        table.languages.insert(LanguageCode::EN);
        for (index, raw) in text.lines().enumerate() {
            let line = index + 1;
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let mut fields = raw.splitn(3, '\t');
            let (Some(key), Some(lang), Some(value)) = (fields.next(), fields.next(), fields.next()) else {
                return Err(TableError::MalformedLine { line });
            };
            if !is_valid_key(key) {
                return Err(TableError::InvalidKey { line, key: key.to_string() });
            }
            let lang: LanguageCode = lang
                .parse()
                .map_err(|reason| TableError::InvalidLanguage { line, reason })?;
            table.languages.insert(lang);
            if table.entries.insert((key.to_string(), lang), value.to_string()).is_some() {
                return Err(TableError::DuplicateEntry { line, key: key.to_string(), lang });
            }
        }
        Ok(table)
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TABLE).expect("bundled table parses")
    }

    pub fn languages(&self) -> &BTreeSet<LanguageCode> {
        &self.languages
    }

    pub fn add_language(&mut self, lang: LanguageCode) {
        self.languages.insert(lang);
    }

    pub fn supports(&self, lang: LanguageCode) -> bool {
        self.languages.contains(&lang)
    }

    /// Every key that appears in any language.
    pub fn keys(&self) -> BTreeSet<&str> {
        self.entries.keys().map(|(k, _)| k.as_str()).collect()
    }

    pub fn get(&self, key: &str, lang: LanguageCode) -> Option<&str> {
        self.entries.get(&(key.to_string(), lang)).map(String::as_str)
    }

    pub fn insert(&mut self, key: &str, lang: LanguageCode, text: impl Into<String>) {
        self.entries.insert((key.to_string(), lang), text.into());
    }

    pub fn remove(&mut self, key: &str, lang: LanguageCode) -> Option<String> {
        self.entries.remove(&(key.to_string(), lang))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for `lang`, then English, then the key itself (with a
    /// diagnostic).
    pub fn translate(&self, key: &str, lang: LanguageCode) -> (String, Option<Diagnostic>) {
        if let Some(text) = self.get(key, lang).or_else(|| self.get(key, LanguageCode::EN)) {
            return (text.to_string(), None);
        }
        (
            key.to_string(),
            Some(Diagnostic::MissingTranslation { key: key.to_string(), lang }),
        )
    }
}

/// Every (key, language) pair missing across the supported languages, in
/// key then language order.
pub fn completeness_check(table: &TranslationTable) -> Vec<(String, LanguageCode)> {
    let mut missing = Vec::new();
    for key in table.keys() {
        for &lang in table.languages() {
            if table.get(key, lang).is_none() {
                missing.push((key.to_string(), lang));
            }
        }
    }
    missing
}

pub type Provider = Box<dyn Fn(&str, LanguageCode) -> Option<String> + Send + Sync>;

/// Thread-safe translation front end with an optional provider consulted on
/// table misses. Provider answers are cached into the table.
#[derive(Default)]
pub struct Localizer {
    table: RwLock<TranslationTable>,
    provider: RwLock<Option<Provider>>,
    diagnostics: Mutex<Vec<Diagnostic>>,
}

impl fmt::Debug for Localizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Localizer")
            .field("entries", &self.table.read().map(|t| t.len()).unwrap_or(0))
            .finish_non_exhaustive()
    }
}

impl Localizer {
    pub fn new(table: TranslationTable) -> Self {
        Self {
            table: RwLock::new(table),
            provider: RwLock::new(None),
            diagnostics: Mutex::new(Vec::new()),
        }
    }

    pub fn bundled() -> Self {
        Self::new(TranslationTable::bundled())
    }

    pub fn register_provider(&self, provider: Provider) {
        *self.provider.write().expect("provider lock") = Some(provider);
    }

    pub fn translate(&self, key: &str, lang: LanguageCode) -> String {
        {
            let table = self.table.read().expect("table lock");
            if let Some(text) = table.get(key, lang) {
                return text.to_string();
            }
        }
        let provided = self
            .provider
            .read()
            .expect("provider lock")
            .as_ref()
            .and_then(|p| p(key, lang));
        if let Some(text) = provided {
            self.table.write().expect("table lock").insert(key, lang, text.clone());
            return text;
        }
        let (text, diagnostic) = self.table.read().expect("table lock").translate(key, lang);
        if let Some(d) = diagnostic {
            log::warn!("{d:?}");
            self.diagnostics.lock().expect("diagnostics lock").push(d);
        }
        text
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        self.diagnostics.lock().expect("diagnostics lock").clone()
    }

    pub fn table(&self) -> TranslationTable {
        self.table.read().expect("table lock").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn bundled_lookups() {
        let table = TranslationTable::bundled();
        assert_eq!(table.translate("menu.export", LanguageCode::EN).0, "Export");
        assert_eq!(table.translate("menu.export", LanguageCode::JA).0, "エクスポート");
        let (text, diagnostic) = table.translate("zzz", LanguageCode::JA);
        assert_eq!(text, "zzz");
        assert_eq!(diagnostic, Some(Diagnostic::MissingTranslation { key: "zzz".into(), lang: LanguageCode::JA }));
    }

    #[test]
    fn english_fallback() {
        let mut table = TranslationTable::bundled();
        table.remove("menu.delete", LanguageCode::JA);
        assert_eq!(table.translate("menu.delete", LanguageCode::JA), ("Delete".to_string(), None));
    }

    #[test]
    fn completeness() {
        let mut table = TranslationTable::bundled();
        assert!(completeness_check(&table).is_empty());
        table.remove("menu.export", LanguageCode::JA);
        assert_eq!(completeness_check(&table), vec![("menu.export".to_string(), LanguageCode::JA)]);

        let mut table = TranslationTable::bundled();
        let de: LanguageCode = "de".parse().unwrap();
        table.add_language(de);
        let missing = completeness_check(&table);
        assert_eq!(missing.len(), table.keys().len());
        assert!(missing.iter().all(|(_, lang)| *lang == de));
    }

    #[test]
    fn provider_results_are_cached() {
        let localizer = Localizer::bundled();
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        let xx: LanguageCode = "xx".parse().unwrap();
        localizer.register_provider(Box::new(move |key, lang| {
            counter.fetch_add(1, Ordering::SeqCst);
            (lang.as_str() == "xx").then(|| key.to_uppercase())
        }));
        assert_eq!(localizer.translate("menu.export", xx), "MENU.EXPORT");
        assert_eq!(localizer.translate("menu.export", xx), "MENU.EXPORT");
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let yy: LanguageCode = "yy".parse().unwrap();
        assert_eq!(localizer.translate("menu.export", yy), "Export");
        assert!(localizer.diagnostics().is_empty());
        assert_eq!(localizer.translate("nope", yy), "nope");
        assert_eq!(localizer.diagnostics().len(), 1);
    }

    #[test]
    fn language_codes() {
        assert!("en".parse::<LanguageCode>().is_ok());
        for bad in ["EN", "e", "eng", "e1", ""] {
            assert!(bad.parse::<LanguageCode>().is_err(), "{bad}");
        }
    }

    #[test]
    fn table_format_errors() {
        assert_eq!(TranslationTable::parse("a.b\ten"), Err(TableError::MalformedLine { line: 1 }));
        assert!(matches!(TranslationTable::parse("a..b\ten\tx"), Err(TableError::InvalidKey { .. })));
        assert!(matches!(TranslationTable::parse("a\tEN\tx"), Err(TableError::InvalidLanguage { .. })));
        assert!(matches!(
            TranslationTable::parse("a\ten\tx\na\ten\ty"),
            Err(TableError::DuplicateEntry { line: 2, .. })
        ));
        let table = TranslationTable::parse("# comment\n\na\ten\tx\twith tab\n").unwrap();
        assert_eq!(table.get("a", LanguageCode::EN), Some("x\twith tab"));
    }
}
