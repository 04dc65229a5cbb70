use std::fs;
use std::path::Path;

use crate::error::Result;

const DEFAULT_SUMMARIZE: &str = include_str!("../../templates/summarize.txt");
const DEFAULT_REASONING: &str = include_str!("../../templates/reasoning.txt");

/// Prompt text for the chat-backed roles. Placeholders are written
/// `{{name}}` and substituted verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub summarize: String,
    pub reasoning: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { summarize: DEFAULT_SUMMARIZE.to_string(), reasoning: DEFAULT_REASONING.to_string() }
    }
}

impl PromptTemplates {
    /// Reads `summarize.txt` and `reasoning.txt` from `dir`; a missing file
    /// keeps the built-in default.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [("summarize.txt", &mut t.summarize), ("reasoning.txt", &mut t.reasoning)] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_placeholders() {
        assert_eq!(render("a {{x}} b {{y}} {{x}}", &[("x", "1"), ("y", "2")]), "a 1 b 2 1");
    }

    #[test]
    fn defaults_have_placeholders() {
        let t = PromptTemplates::default();
        assert!(t.summarize.contains("{{texts}}") && t.summarize.contains("{{max_len}}"));
        for key in ["{{question}}", "{{context}}", "{{answer}}"] {
            assert!(t.reasoning.contains(key));
        }
    }

    #[test]
    fn directory_overrides_one_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("reasoning.txt"), "why {{answer}}").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.reasoning, "why {{answer}}");
        assert_eq!(t.summarize, PromptTemplates::default().summarize);
    }
}
