//! Versioned prompt templates with `{{slot}}` placeholders.
//!
//! Template files hold a `=== system ===` section followed by a
//! `=== user ===` section. A template's id is its name, language and a
//! content hash, so any edit to the file yields a new id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::io::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template_id}: slot `{slot}` left unfilled")]
    UnfilledSlot { template_id: String, slot: String },
    #[error("template {template_id}: value for unknown slot `{slot}`")]
    UnknownSlot { template_id: String, slot: String },
    #[error("malformed template {name}: {reason}")]
    Malformed { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    Zh,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            other => Err(format!("unknown language `{other}` (expected zh or en)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Body {
    segments: Vec<Segment>,
}

impl Body {
    fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = text;
        while let Some(start) = rest.find("{{") {
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| TemplateError::Malformed {
                name: name.to_string(),
                reason: "unterminated `{{`".into(),
            })?;
            let slot = after[..end].trim();
            if slot.is_empty() || !slot.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(TemplateError::Malformed {
                    name: name.to_string(),
                    reason: format!("bad slot name `{slot}`"),
                });
            }
            if start > 0 {
                segments.push(Segment::Text(rest[..start].to_string()));
            }
            segments.push(Segment::Slot(slot.to_string()));
            rest = &after[end + 2..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Text(rest.to_string()));
        }
        Ok(Body { segments })
    }

    fn slots(&self) -> impl Iterator<Item = &str> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Slot(n) => Some(n.as_str()),
            Segment::Text(_) => None,
        })
    }

    fn render(&self, id: &str, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(n) => match values.get(n.as_str()) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::UnfilledSlot {
                            template_id: id.to_string(),
                            slot: n.clone(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    template_id: String,
    system: Body,
    user: Body,
    source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template_id: String,
    pub system: String,
    pub user: String,
}

const SYSTEM_MARK: &str = "=== system ===";
const USER_MARK: &str = "=== user ===";

impl PromptTemplate {
    /// Parses a template file. `name` is combined with a hash of `text`
    /// into the template id.
    pub fn parse(name: &str, text: &str) -> Result<Self, TemplateError> {
        let malformed = |reason: &str| TemplateError::Malformed {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let body = text
            .strip_prefix(SYSTEM_MARK)
            .ok_or_else(|| malformed("missing system header"))?;
        let body = body.strip_prefix('\n').unwrap_or(body);
        let (system, user) = if let Some(rest) = body.strip_prefix(USER_MARK) {
            ("", rest)
        } else {
            let marker = format!("\n{USER_MARK}");
            let at = body.find(&marker).ok_or_else(|| malformed("missing user header"))?;
            (&body[..at], &body[at + marker.len()..])
        };
        let user = user.strip_prefix('\n').unwrap_or(user);
        let user = user.strip_suffix('\n').unwrap_or(user);
        let hash = sha256_hex(text.as_bytes());
        Ok(PromptTemplate {
            template_id: format!("{name}@{}", &hash[..12]),
            system: Body::parse(name, system)?,
            user: Body::parse(name, user)?,
            source: text.to_string(),
        })
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    /// The file text the template was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn slots(&self) -> BTreeSet<&str> {
        self.system.slots().chain(self.user.slots()).collect()
    }

    /// Fills every slot. Missing values and values for slots the template
    /// does not have are both errors.
    pub fn render(&self, values: &[(&str, String)]) -> Result<RenderedPrompt, TemplateError> {
        let map: BTreeMap<&str, String> = values.iter().cloned().collect();
        let slots = self.slots();
        if let Some(extra) = map.keys().find(|k| !slots.contains(*k)) {
            return Err(TemplateError::UnknownSlot {
                template_id: self.template_id.clone(),
                slot: extra.to_string(),
            });
        }
        Ok(RenderedPrompt {
            template_id: self.template_id.clone(),
            system: self.system.render(&self.template_id, &map)?,
            user: self.user.render(&self.template_id, &map)?,
        })
    }
}

/// Names of the bundled templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    TypeInference,
    TypeRetry,
    InterpretationVlm,
    RetrieverPlan,
    Reasoner,
    Judge,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::TypeInference => "type_inference",
            TemplateName::TypeRetry => "type_retry",
            TemplateName::InterpretationVlm => "interpretation_vlm",
            TemplateName::RetrieverPlan => "retriever_plan",
            TemplateName::Reasoner => "reasoner",
            TemplateName::Judge => "judge",
        }
    }
}

macro_rules! bundled {
    ($file:literal) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $file))
    };
}

fn source_of(name: TemplateName, lang: Language) -> (&'static str, &'static str) {
    use Language::*;
    use TemplateName::*;
    match (name, lang) {
        (TypeInference, En) => ("type_inference.en", bundled!("type_inference.en.txt")),
        (TypeInference, Zh) => ("type_inference.zh", bundled!("type_inference.zh.txt")),
        (TypeRetry, En) => ("type_retry.en", bundled!("type_retry.en.txt")),
        (TypeRetry, Zh) => ("type_retry.zh", bundled!("type_retry.zh.txt")),
        (InterpretationVlm, En) => ("interpretation_vlm.en", bundled!("interpretation_vlm.en.txt")),
        (InterpretationVlm, Zh) => ("interpretation_vlm.zh", bundled!("interpretation_vlm.zh.txt")),
        (RetrieverPlan, En) => ("retriever_plan.en", bundled!("retriever_plan.en.txt")),
        (RetrieverPlan, Zh) => ("retriever_plan.zh", bundled!("retriever_plan.zh.txt")),
        (Reasoner, En) => ("reasoner.en", bundled!("reasoner.en.txt")),
        (Reasoner, Zh) => ("reasoner.zh", bundled!("reasoner.zh.txt")),
        // the judge rubric exists in one language only
        (Judge, _) => ("judge", bundled!("judge.txt")),
    }
}

/// Returns a bundled template. Bundled files are checked by the test suite,
/// so parsing them cannot fail at run time.
pub fn template(name: TemplateName, lang: Language) -> &'static PromptTemplate {
    static CACHE: OnceLock<BTreeMap<(TemplateName, Language), PromptTemplate>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        let names = [
            TemplateName::TypeInference,
            TemplateName::TypeRetry,
            TemplateName::InterpretationVlm,
            TemplateName::RetrieverPlan,
            TemplateName::Reasoner,
            TemplateName::Judge,
        ];
        let mut m = BTreeMap::new();
        for n in names {
            for l in [Language::Zh, Language::En] {
                let (id, text) = source_of(n, l);
                let t = PromptTemplate::parse(id, text).expect("bundled template parses");
                m.insert((n, l), t);
            }
        }
        m
    });
    &all[&(name, lang)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_all_slots() {
        let t = PromptTemplate::parse("t", "=== system ===\nsys {{a}}\n=== user ===\nhi {{b}} {{a}}\n").unwrap();
        assert_eq!(t.slots().into_iter().collect::<Vec<_>>(), ["a", "b"]);
        let r = t.render(&[("a", "1".into()), ("b", "{{x}}".into())]).unwrap();
        assert_eq!(r.system, "sys 1");
        assert_eq!(r.user, "hi {{x}} 1");
        assert!(matches!(t.render(&[("a", "1".into())]), Err(TemplateError::UnfilledSlot { .. })));
        assert!(matches!(
            t.render(&[("a", "1".into()), ("b", "2".into()), ("c", "3".into())]),
            Err(TemplateError::UnknownSlot { .. })
        ));
    }

    #[test]
    fn empty_system_section() {
        let t = PromptTemplate::parse("t", "=== system ===\n=== user ===\nonly user\n").unwrap();
        let r = t.render(&[]).unwrap();
        assert_eq!(r.system, "");
        assert_eq!(r.user, "only user");
    }

    #[test]
    fn id_changes_with_content() {
        let a = PromptTemplate::parse("t", "=== system ===\n=== user ===\nx\n").unwrap();
        let b = PromptTemplate::parse("t", "=== system ===\n=== user ===\ny\n").unwrap();
        assert_ne!(a.template_id(), b.template_id());
        assert!(a.template_id().starts_with("t@"));
    }

    #[test]
    fn malformed_templates() {
        assert!(PromptTemplate::parse("t", "no header").is_err());
        assert!(PromptTemplate::parse("t", "=== system ===\nx\n").is_err());
        assert!(PromptTemplate::parse("t", "=== system ===\n=== user ===\n{{oops\n").is_err());
        assert!(PromptTemplate::parse("t", "=== system ===\n=== user ===\n{{a b}}\n").is_err());
    }

    #[test]
    fn bundled_templates_share_slots_across_languages() {
        for n in [
            TemplateName::TypeInference,
            TemplateName::TypeRetry,
            TemplateName::InterpretationVlm,
            TemplateName::RetrieverPlan,
            TemplateName::Reasoner,
        ] {
            let zh = template(n, Language::Zh);
            let en = template(n, Language::En);
            assert_eq!(zh.slots(), en.slots(), "{}", n.as_str());
            assert_ne!(zh.template_id(), en.template_id());
        }
    }
}
