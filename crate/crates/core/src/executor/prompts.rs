use crate::gateway::ChatMessage;

pub const QA_SYSTEM_PROMPT: &str = "Answer the question based only on the given context. If the context lacks the needed evidence, respond exactly: unanswerable.";

pub const SPLIT_SYSTEM_PROMPT: &str = "Given a question, and this question may need the information from multiple sources.\n\
Please split this question into multiple sub-questions, each of which can be answered by a single source. The final answer should be several sub-questions separated by the line-breaker.";

pub const SPLIT_DEMO_QUESTION: &str =
    "Which university has the larger campus, University of New Haven or University of West Florida?";
pub const SPLIT_DEMO_ANSWER: &str =
    "What is the campus size of University of New Haven?\nWhat is the campus size of University of West Florida?";

pub const STEP_SYSTEM_PROMPT: &str = "Given a question, which may need multiple steps to get the final answer. Please first get the existing evidence for the question based on the given context, and then generate a next-step query to query additional information. If the question can already be totally answered, you should output '### Answer: The answer is: <answer>' at the end. Otherwise, output 'None'. The answer should be based only on the context. \"\"\"";

pub const STEP_DEMO_USER: &str = "### Context: 100 Rifles is directed by Tom Gries and starring Jim Brown and Raquel Welch. ### Question: 100 Rifles is a western film, starring an actress of what nationality?";
pub const STEP_DEMO_ASSISTANT: &str = "### Evidence: The main actress in 100 Rifles is Raquel Welch. ### Next-Query: What is the nationality of Raquel Welch? ### Answer: None";

/// At most this many sub-queries are kept from a split.
pub const MAX_SUB_QUERIES: usize = 5;

pub fn qa_messages(question: &str, context: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(QA_SYSTEM_PROMPT),
        ChatMessage::user(format!("### Context: {context} ### Question: {question} ### Answer:")),
    ]
}

pub fn split_messages(question: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(SPLIT_SYSTEM_PROMPT),
        ChatMessage::user(SPLIT_DEMO_QUESTION),
        ChatMessage::assistant(SPLIT_DEMO_ANSWER),
        ChatMessage::user(question),
    ]
}

pub fn step_messages(question: &str, context: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(STEP_SYSTEM_PROMPT),
        ChatMessage::user(STEP_DEMO_USER),
        ChatMessage::assistant(STEP_DEMO_ASSISTANT),
        ChatMessage::user(format!("### Context: {context} ### Question:{question}")),
    ]
}

/// One sub-query per non-empty line, list markers stripped, duplicates
/// dropped, capped at [`MAX_SUB_QUERIES`].
pub fn parse_sub_queries(raw: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in raw.lines() {
        let mut s = line.trim();
        s = s.trim_start_matches(['-', '*', '•']).trim_start();
        let digits = s.chars().take_while(char::is_ascii_digit).count();
        if digits > 0 && s[digits..].starts_with(['.', ')']) {
            s = s[digits + 1..].trim_start();
        }
        if !s.is_empty() && !out.iter().any(|q| q == s) {
            out.push(s.to_string());
        }
        if out.len() == MAX_SUB_QUERIES {
            break;
        }
    }
    out
}

/// Parsed output of one step-wise turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutput {
    pub evidence: String,
    pub next_query: Option<String>,
    pub answer: Option<String>,
}

const EVIDENCE_MARK: &str = "### Evidence:";
const NEXT_MARK: &str = "### Next-Query:";
const ANSWER_MARK: &str = "### Answer:";
const ANSWER_PREFIX: &str = "The answer is:";

fn field<'a>(raw: &'a str, mark: &str) -> Option<&'a str> {
    let start = raw.find(mark)? + mark.len();
    let rest = &raw[start..];
    let end = [EVIDENCE_MARK, NEXT_MARK, ANSWER_MARK]
        .iter()
        .filter_map(|m| rest.find(m))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim())
}

/// Reads the answer value of a `### Answer:` field: the text after
/// "The answer is:" when present, else the whole field. "None" (any case)
/// means no answer yet.
pub fn extract_answer(field: &str) -> Option<String> {
    let value = match field.find(ANSWER_PREFIX) {
        Some(i) => field[i + ANSWER_PREFIX.len()..].trim(),
        None => field.trim(),
    };
    if value.is_empty() || value.trim_end_matches('.').eq_ignore_ascii_case("none") {
        None
    } else {
        Some(value.to_string())
    }
}

/// Returns `None` when the output carries neither a usable answer nor a
/// next query.
pub fn parse_step(raw: &str) -> Option<StepOutput> {
    let evidence = field(raw, EVIDENCE_MARK).unwrap_or_default().to_string();
    let answer = field(raw, ANSWER_MARK).and_then(extract_answer);
    let next_query = field(raw, NEXT_MARK).filter(|q| !q.is_empty() && !q.eq_ignore_ascii_case("none"));
    if answer.is_none() && next_query.is_none() {
        return None;
    }
    Some(StepOutput {
        evidence,
        next_query: if answer.is_some() {
            None
        } else {
            next_query.map(str::to_string)
        },
        answer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demonstration_turn_parses() {
        let out = parse_step(STEP_DEMO_ASSISTANT).unwrap();
        assert_eq!(out.evidence, "The main actress in 100 Rifles is Raquel Welch.");
        assert_eq!(
            out.next_query.as_deref(),
            Some("What is the nationality of Raquel Welch?")
        );
        assert_eq!(out.answer, None);
    }

    #[test]
    fn terminal_turn_parses() {
        let out = parse_step("### Evidence: Raquel Welch is American. ### Answer: The answer is: American").unwrap();
        assert_eq!(out.answer.as_deref(), Some("American"));
        assert_eq!(out.next_query, None);
        assert_eq!(extract_answer("NONE"), None);
        assert_eq!(extract_answer("Paris"), Some("Paris".into()));
    }

    #[test]
    fn garbage_is_unparseable() {
        assert_eq!(parse_step("I think it is complicated."), None);
        assert_eq!(parse_step("### Answer: None"), None);
    }

    #[test]
    fn sub_query_lines() {
        let subs = parse_sub_queries(SPLIT_DEMO_ANSWER);
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[1], "What is the campus size of University of West Florida?");
        assert_eq!(parse_sub_queries("1. a?\n- b?\n\n a? \n2) c?"), vec!["a?", "b?", "c?"]);
        assert_eq!(parse_sub_queries("q1\nq2\nq3\nq4\nq5\nq6").len(), MAX_SUB_QUERIES);
        assert!(parse_sub_queries(" \n").is_empty());
    }
}
