//! Plain `key = value` files with optional `[section]` headers.
//! `#` starts a comment (whole line or trailing); blank lines are ignored.

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Section {
    /// Header words, e.g. `["strategy", "M1"]`; empty for the preamble.
    pub header: Vec<String>,
    pub line: usize,
    pub entries: Vec<(String, String, usize)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KvFile {
    pub sections: Vec<Section>,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let mut sections = vec![Section::default()];
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('[') {
                let h = h.strip_suffix(']').ok_or_else(|| HarnessError::config(origin, n, "unterminated section header"))?;
                let header: Vec<String> = h.split_whitespace().map(String::from).collect();
                if header.is_empty() {
                    return Err(HarnessError::config(origin, n, "empty section header"));
                }
                sections.push(Section {
                    header,
                    line: n,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::config(origin, n, "expected key = value"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(HarnessError::config(origin, n, "empty key"));
            }
            sections
                .last_mut()
                .unwrap()
                .entries
                .push((k.to_string(), v.trim().to_string(), n));
        }
        Ok(KvFile { sections })
    }

    pub fn preamble(&self) -> &Section {
        &self.sections[0]
    }

    pub fn named(&self, kind: &str) -> impl Iterator<Item = &Section> {
        let kind = kind.to_string();
        self.sections.iter().skip(1).filter(move |s| s.header[0] == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let f = KvFile::parse("a = 1 # note\n\n[base m]\nkind = x\nkind = y\n[model]\n", "t").unwrap();
        assert_eq!(f.preamble().get("a"), Some("1"));
        let b: Vec<_> = f.named("base").collect();
        assert_eq!(b[0].header, ["base", "m"]);
        assert_eq!(b[0].get("kind"), Some("y"));
        assert_eq!(f.named("model").count(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = KvFile::parse("a = 1\nnonsense\n", "p.txt").unwrap_err();
        assert_eq!(e.to_string(), "config: p.txt:2: expected key = value");
        assert!(KvFile::parse("[oops\n", "p").is_err());
        assert!(KvFile::parse("[ ]\n", "p").is_err());
        assert!(KvFile::parse(" = 3\n", "p").is_err());
    }
}
