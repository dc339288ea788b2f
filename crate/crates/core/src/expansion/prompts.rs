//! Versioned prompt templates. `[Query]` / `[Document]` mark the source
//! text slot and `$N$` the requested topic count.

pub const TQE_PROMPT_VERSION: &str = "tqe-v1";
pub const TDE_PROMPT_VERSION: &str = "tde-v1";

pub const TQE_TEMPLATE: &str = "Given a user query: [Query]\n\nYour task is to generate $N$ diverse topic-focused documents that each reflect a different perspective or subtopic relevant to the query.";

pub const TDE_TEMPLATE: &str = "Given a document: [Document]\nPlease analyze this document and identify $N$ abstract topics. Each topic should be expressed as a single sentence.";

/// Default character budget for document text substituted into the prompt.
pub const DEFAULT_DOC_BUDGET: usize = 8_000;

// The count is substituted first so that source text containing `$N$` is
// left untouched.
fn fill(template: &str, slot: &str, source: &str, n: usize) -> String {
    template.replacen("$N$", &n.to_string(), 1).replacen(slot, source, 1)
}

pub fn build_tqe_prompt(query_text: &str, n: usize) -> String {
    fill(TQE_TEMPLATE, "[Query]", query_text, n)
}

/// First `budget` characters of `text`.
pub fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((byte, _)) => &text[..byte],
        None => text,
    }
}

pub fn build_tde_prompt(doc_text: &str, n: usize, budget: usize) -> String {
    fill(TDE_TEMPLATE, "[Document]", truncate_chars(doc_text, budget), n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tqe_substitutes_query_and_count() {
        let p = build_tqe_prompt("test", 3);
        assert!(p.contains("generate 3 diverse topic-focused documents"));
        assert!(p.starts_with("Given a user query: test\n"));
        assert!(build_tqe_prompt("test", 1).contains("generate 1 diverse topic-focused documents"));
        assert_eq!(build_tqe_prompt("test", 3), p);
    }

    #[test]
    fn tqe_source_placeholders_left_alone() {
        let p = build_tqe_prompt("cost of $N$ items", 2);
        assert!(p.contains("cost of $N$ items"));
        assert!(p.contains("generate 2 diverse"));
    }

    #[test]
    fn tde_substitutes_count() {
        assert!(build_tde_prompt("doc", 5, 100).contains("identify 5 abstract topics"));
        assert!(build_tde_prompt("doc", 3, 100).contains("identify 3 abstract topics"));
    }

    #[test]
    fn tde_truncates_document() {
        let p = build_tde_prompt("abcdefghij", 5, 4);
        assert!(p.starts_with("Given a document: abcd\n"));
        assert_eq!(truncate_chars("ééé", 2), "éé");
        assert_eq!(truncate_chars("ab", 10), "ab");
    }
}
