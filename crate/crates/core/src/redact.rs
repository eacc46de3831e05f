//! Pattern-based redaction of OCR text.
//!
//! The default rules cover the four structured identifiers. Patterns are
//! used exactly as given; the email pattern's bare `.` matches any
//! character.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::document::PhiCategory;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionRule {
    pub category: PhiCategory,
    pub pattern: String,
    pub replacement: String,
}

impl RedactionRule {
    pub fn new(category: PhiCategory, pattern: &str) -> Self {
        RedactionRule {
            category,
            pattern: pattern.into(),
            replacement: replacement_token(category),
        }
    }
}

/// `[REDACTED-MRN]`, `[REDACTED-EMAIL]`, ...
pub fn replacement_token(category: PhiCategory) -> String {
    let tag = match category {
        PhiCategory::DateOfBirth => "DOB".to_string(),
        other => other.name().to_ascii_uppercase(),
    };
    format!("[REDACTED-{tag}]")
}

pub fn default_rules() -> Vec<RedactionRule> {
    vec![
        RedactionRule::new(PhiCategory::Mrn, r"MRN-\d+"),
        RedactionRule::new(PhiCategory::Ssn, r"\d{3}-\d{2}-\d{4}"),
        RedactionRule::new(PhiCategory::Email, r"\w+@\w+.\w+"),
        RedactionRule::new(PhiCategory::Account, r"ACCT-\d+"),
    ]
}

/// A replaced span in the *input* text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionHit {
    pub category: PhiCategory,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redaction {
    pub text: String,
    pub hits: Vec<RedactionHit>,
    /// Matches found, including those skipped by the accuracy draw.
    pub matches: usize,
}

#[derive(Clone, Debug)]
pub struct Redactor {
    rules: Vec<RedactionRule>,
    compiled: Vec<Regex>,
}

impl Redactor {
    pub fn new(rules: Vec<RedactionRule>) -> Result<Self> {
        let invalid = |rule: &RedactionRule, reason: String| Error::InvalidRule {
            category: rule.category.to_string(),
            reason,
        };
        let mut compiled = Vec::with_capacity(rules.len());
        for rule in &rules {
            let re = Regex::new(&rule.pattern).map_err(|e| invalid(rule, e.to_string()))?;
            if re.is_match("") {
                return Err(invalid(rule, "pattern matches the empty string".into()));
            }
            compiled.push(re);
        }
        for rule in &rules {
            if let Some(re) = compiled.iter().find(|re| re.is_match(&rule.replacement)) {
                return Err(invalid(
                    rule,
                    format!("replacement `{}` matches pattern `{}`", rule.replacement, re),
                ));
            }
        }
        Ok(Redactor { rules, compiled })
    }

    pub fn with_defaults() -> Self {
        Redactor::new(default_rules()).expect("default rules are valid")
    }

    /// Reads a JSON array of `{category, pattern, replacement}`.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Redactor::new(serde_json::from_slice(&raw)?)
    }

    pub fn rules(&self) -> &[RedactionRule] {
        &self.rules
    }

    /// Leftmost-longest, non-overlapping matches across all rules. Ties on
    /// start and length go to the earlier rule.
    pub fn find_matches(&self, text: &str) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos <= text.len() {
            let best = self
                .compiled
                .iter()
                .enumerate()
                .filter_map(|(i, re)| re.find_at(text, pos).map(|m| (m.start(), m.end(), i)))
                .min_by_key(|&(s, e, i)| (s, std::cmp::Reverse(e), i));
            match best {
                Some(m) => {
                    out.push(m);
                    pos = m.1;
                }
                None => break,
            }
        }
        out
    }

    /// Replaces each match with its rule's token. With `accuracy < 1` each
    /// match is independently skipped with probability `1 - accuracy`.
    pub fn redact(&self, text: &str, accuracy: f64, seed: u64) -> Result<Redaction> {
        check_accuracy(accuracy)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let found = self.find_matches(text);
        let mut out = String::with_capacity(text.len());
        let mut hits = Vec::new();
        let mut last = 0;
        for &(start, end, rule) in &found {
            if !rng.gen_bool(accuracy) {
                continue;
            }
            out.push_str(&text[last..start]);
            out.push_str(&self.rules[rule].replacement);
            last = end;
            hits.push(RedactionHit {
                category: self.rules[rule].category,
                start,
                end,
            });
        }
        out.push_str(&text[last..]);
        Ok(Redaction {
            text: out,
            hits,
            matches: found.len(),
        })
    }
}

pub fn check_accuracy(accuracy: f64) -> Result<()> {
    if accuracy > 0.0 && accuracy <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "accuracy must lie in (0, 1], got {accuracy}"
        )))
    }
}
