//! Prompt templates for the gateway tasks.
//!
//! Every task asks for a single fenced ```json block of a task-specific
//! shape, which is what the parsers in the task layer expect.

use crate::guidance::Keyword;

pub(crate) const REWRITE_SYSTEM: &str = "You rewrite questions so they can be matched against a knowledge graph. Always answer with a single fenced ```json block.";

pub(crate) fn rewrite_user(question: &str) -> String {
    format!(
        "Rewrite the question below as one complete declarative statement. \
         Resolve ellipses and implicit references so the statement is self-contained.\n\
         Question: {question}\n\
         Respond with: ```json\n{{\"statement\": \"...\"}}\n```"
    )
}

pub(crate) const EXTRACT_SYSTEM: &str = "You extract keywords from statements for knowledge-graph lookup. Always answer with a single fenced ```json block.";

pub(crate) fn extract_user(statement: &str) -> String {
    format!(
        "From the statement below, extract every keyword and classify it:\n\
         - kind \"specific\": a named entity (for example a person, title, or place name)\n\
         - kind \"generic\": a broader term (for example \"country\" or \"film\")\n\
         Keywords that refer to the same entity must share one group id (g1, g2, ...).\n\
         Statement: {statement}\n\
         Respond with: ```json\n{{\"keywords\": [{{\"label\": \"...\", \"kind\": \"specific|generic\", \"group\": \"g1\"}}]}}\n```"
    )
}

pub(crate) const MINE_SYSTEM: &str = "You mine relationships between keyword groups. Always answer with a single fenced ```json block.";

pub(crate) fn mine_user(statement: &str, keywords: &[Keyword]) -> String {
    let listing: Vec<String> = keywords
        .iter()
        .map(|k| format!("- {} ({:?}, group {})", k.label, k.kind, k.group))
        .collect();
    format!(
        "Given the statement and its keyword groups, list the semantic relationships \
         between groups that the statement expresses. Use the exact group ids. Leave \
         \"label\" empty when the relationship is clear but unnamed. Never relate a \
         group to itself.\n\
         Statement: {statement}\n\
         Keywords:\n{}\n\
         Respond with: ```json\n{{\"associations\": [{{\"head_group\": \"g1\", \"label\": \"...\", \"tail_group\": \"g2\"}}]}}\n```",
        listing.join("\n")
    )
}

pub(crate) const SELECT_RELATION_SYSTEM: &str = "You choose the knowledge-graph relation that best preserves the meaning of a phrase. Answer with the relation name only.";

pub(crate) fn select_relation_user(phrase: &str, candidates: &[String]) -> String {
    format!(
        "Target phrase: {phrase}\n\
         Candidate relations:\n{}\n\
         Select the single candidate that can substitute the relation in the target \
         phrase while preserving its meaning. Respond with exactly one candidate name.",
        candidates
            .iter()
            .map(|c| format!("- {c}"))
            .collect::<Vec<_>>()
            .join("\n")
    )
}

pub(crate) const SELECT_BRANCH_SYSTEM: &str = "You compare two exploration phrases against the query context. Answer with a single fenced ```json block.";

pub(crate) fn select_branch_user(phrase_a: &str, phrase_b: &str) -> String {
    format!(
        "Two exploration phrases are available:\n\
         0: {phrase_a}\n\
         1: {phrase_b}\n\
         Select the phrase that better matches the query context.\n\
         Respond with: ```json\n{{\"choice\": 0}}\n``` or ```json\n{{\"choice\": 1}}\n```"
    )
}

pub(crate) const FINAL_ANSWER_SYSTEM: &str = "You answer questions strictly from the provided knowledge triples. Always answer with a single fenced ```json block.";

pub(crate) fn final_answer_user(question: &str, knowledge: &[String]) -> String {
    format!(
        "Knowledge:\n{}\n\
         Question: {question}\n\
         Answer the question using only the knowledge above. List every answer entity.\n\
         Respond with: ```json\n{{\"answers\": [\"...\"]}}\n```",
        knowledge
            .iter()
            .map(|l| format!("- {l}"))
            .collect::<Vec<_>>()
            .join("\n")
    )
}

pub(crate) const DIRECT_ANSWER_SYSTEM: &str = "You answer questions from your own knowledge. Always answer with a single fenced ```json block.";

pub(crate) fn direct_answer_user(question: &str) -> String {
    format!(
        "Question: {question}\n\
         Answer directly. List every answer entity.\n\
         Respond with: ```json\n{{\"answers\": [\"...\"]}}\n```"
    )
}

pub(crate) fn corrective_user(previous: &str, why: &str, expected: &str) -> String {
    format!(
        "Your previous reply was:\n{previous}\n\
         It could not be used: {why}.\n\
         Respond again with only a single fenced ```json block shaped like {expected}."
    )
}
