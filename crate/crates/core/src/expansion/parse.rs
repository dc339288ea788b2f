use std::sync::OnceLock;

use regex::Regex;

use super::{TopicKind, TopicSet};
use crate::error::{Error, Result};

fn enumerator() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])(?:\s+|$)(.*)$").unwrap())
}

/// Splits raw LLM output into topics.
///
/// When any line starts with an enumerator (`1.`, `1)`, `-`, `*`, `•`), each
/// enumerated line opens a topic, unenumerated lines after it are folded
/// into that topic, and lines before the first enumerator are dropped.
/// Otherwise every non-empty line is a topic.
pub fn parse_topics(raw: &str, requested: usize, kind: TopicKind) -> Result<Vec<String>> {
    let enumerated = raw.lines().any(|l| enumerator().is_match(l));
    let mut topics: Vec<String> = Vec::new();
    if enumerated {
        let mut open = false;
        for line in raw.lines() {
            if let Some(caps) = enumerator().captures(line) {
                topics.push(caps[1].trim().to_string());
                open = true;
            } else if open && !line.trim().is_empty() {
                let last = topics.last_mut().expect("open topic");
                if !last.is_empty() {
                    last.push(' ');
                }
                last.push_str(line.trim());
            }
        }
    } else {
        topics.extend(raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    topics.retain(|t| !t.is_empty());

    if topics.is_empty() {
        return Err(Error::EmptyExpansion);
    }
    if topics.len() > requested {
        log::warn!("{kind:?}: LLM returned {} topics, keeping the first {requested}", topics.len());
        topics.truncate(requested);
    } else if topics.len() < requested {
        log::warn!("{kind:?}: LLM returned {} of {requested} requested topics", topics.len());
    }
    Ok(topics)
}

impl TopicSet {
    pub fn parse(raw: &str, requested: usize, kind: TopicKind, model_id: &str) -> Result<Self> {
        Ok(Self {
            topics: parse_topics(raw, requested, kind)?,
            kind,
            requested,
            model_id: model_id.to_string(),
            prompt_version: kind.prompt_version().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: TopicKind = TopicKind::Tqe;

    #[test]
    fn numbered_lines() {
        assert_eq!(parse_topics("1. A\n2. B\n3. C", 3, K).unwrap(), ["A", "B", "C"]);
    }

    #[test]
    fn under_delivery_kept() {
        assert_eq!(parse_topics("1. A\n2. B", 5, K).unwrap(), ["A", "B"]);
    }

    #[test]
    fn over_delivery_truncated() {
        assert_eq!(parse_topics("- a\n- b\n- c", 2, K).unwrap(), ["a", "b"]);
    }

    #[test]
    fn blank_output_is_empty_expansion() {
        assert!(matches!(parse_topics("\n \n", 5, K), Err(Error::EmptyExpansion)));
        assert!(matches!(parse_topics("1.\n2.  ", 5, K), Err(Error::EmptyExpansion)));
    }

    #[test]
    fn plain_lines_when_no_enumerator() {
        assert_eq!(parse_topics("first\n\n second \n", 5, K).unwrap(), ["first", "second"]);
    }

    #[test]
    fn mixed_markers_preamble_and_continuations() {
        let raw = "Here are the topics:\n1) Alpha\n   more on alpha\n• Beta\n* Gamma";
        assert_eq!(parse_topics(raw, 5, K).unwrap(), ["Alpha more on alpha", "Beta", "Gamma"]);
    }

    #[test]
    fn decimal_numbers_are_not_enumerators() {
        assert_eq!(parse_topics("1.5 million people\nsecond", 5, K).unwrap(), ["1.5 million people", "second"]);
    }
}
