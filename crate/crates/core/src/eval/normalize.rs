//! Keyword matcher from free-text answers to the closed task vocabularies.

use crate::morphology::SpreadCategory;
use crate::na::NA;
use crate::qagen::{Gold, GoldValue, OosKind, TaskSet, Task};
use crate::regions::{Region, VolumeBin};
use crate::shape::ShapeCategory;

/// Phrases that mark a declined (out-of-scope) request.
const DECLINE_MARKERS: [&str; 9] = [
    "cannot",
    "can't",
    "unable",
    "not able",
    "outside",
    "beyond",
    "not something",
    "not available",
    "no access",
];

/// `phrase` occurs in `text` delimited by non-alphanumeric characters, so
/// "round" does not match inside "surrounding".
fn contains_phrase(text: &str, phrase: &str) -> bool {
    text.match_indices(phrase).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + phrase.len()..].chars().next();
        !before.is_some_and(|c| c.is_alphanumeric()) && !after.is_some_and(|c| c.is_alphanumeric())
    })
}

/// The single vocabulary entry mentioned in `text`; several distinct
/// entries make the answer ambiguous.
fn single_match<T: Copy + PartialEq>(text: &str, vocab: &[T], name: fn(T) -> &'static str) -> Option<Option<T>> {
    let hits: Vec<T> = vocab.iter().copied().filter(|v| contains_phrase(text, name(*v))).collect();
    match hits.as_slice() {
        [] => None,
        [one] => Some(Some(*one)),
        _ => Some(None),
    }
}

fn categorical<T: Copy + PartialEq>(text: &str, vocab: &[T], name: fn(T) -> &'static str, na: bool) -> GoldValue<T> {
    match single_match(text, vocab, name) {
        Some(Some(v)) => GoldValue::Value(v),
        Some(None) => GoldValue::Unspecified,
        None if na => GoldValue::NotApplicable,
        None => GoldValue::Unspecified,
    }
}

/// Regions named anywhere in the text. Lists separated by commas or "and"
/// need no special handling because each name is matched on its own.
fn regions(text: &str, na: bool) -> GoldValue<Vec<Region>> {
    let tokens: Vec<&str> = text
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|t| !t.is_empty())
        .collect();
    let found: Vec<Region> = Region::ALL
        .into_iter()
        .filter(|r| tokens.contains(&r.as_str()))
        .collect();
    if !found.is_empty() {
        GoldValue::Value(found)
    } else if text.contains("no mapped region") {
        GoldValue::Value(Vec::new())
    } else if na {
        GoldValue::NotApplicable
    } else {
        GoldValue::Unspecified
    }
}

/// Parse an answer to a question about `tasks`. Matching is
/// case-insensitive; a task with no vocabulary hit is N/A when the text says
/// so and unanswered otherwise.
pub fn normalize_answer(text: &str, tasks: TaskSet) -> (Gold, OosKind) {
    let lower = text.to_lowercase();
    let na = lower.contains(&NA.to_lowercase()) || lower.contains("not applicable");
    let mut gold = Gold::unspecified();
    for task in tasks.tasks() {
        match task {
            Task::Volume => gold.volume = categorical(&lower, &VolumeBin::ALL, VolumeBin::as_str, na),
            Task::Region => gold.regions = regions(&lower, na),
            Task::Shape => gold.shape = categorical(&lower, &ShapeCategory::ALL, ShapeCategory::as_str, na),
            Task::Spread => gold.spread = categorical(&lower, &SpreadCategory::ALL, SpreadCategory::as_str, na),
        }
    }
    let declined = DECLINE_MARKERS.iter().any(|m| contains_phrase(&lower, m));
    let answered = Task::ALL.iter().any(|&t| !gold.is_unspecified(t));
    let oos = match (declined, answered) {
        (false, _) => OosKind::None,
        (true, true) => OosKind::Partial,
        (true, false) => OosKind::Full,
    };
    (gold, oos)
}
