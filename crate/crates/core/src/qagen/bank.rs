//! Question/answer templates and the bank file format.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{Error, Result};

/// Set of tasks as a 4-bit mask in `Task::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TaskSet(u8);

impl TaskSet {
    pub const EMPTY: TaskSet = TaskSet(0);
    pub const FULL: TaskSet = TaskSet(0b1111);

    pub fn from_tasks(tasks: impl IntoIterator<Item = Task>) -> Self {
        TaskSet(tasks.into_iter().fold(0, |m, t| m | t.bit()))
    }

    pub fn from_bits(bits: u8) -> Self {
        TaskSet(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, task: Task) -> bool {
        self.0 & task.bit() != 0
    }

    pub fn union(self, other: TaskSet) -> TaskSet {
        TaskSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_superset(self, other: TaskSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn tasks(self) -> impl Iterator<Item = Task> {
        Task::ALL.into_iter().filter(move |t| self.contains(*t))
    }

    /// The fifteen nonempty subsets, in bit order.
    pub fn all_nonempty() -> impl Iterator<Item = TaskSet> {
        (1u8..16).map(TaskSet)
    }
}

impl fmt::Display for TaskSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.tasks().map(Task::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for TaskSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.tasks())
    }
}

impl<'de> Deserialize<'de> for TaskSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Vec::<Task>::deserialize(d).map(TaskSet::from_tasks)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Multitask,
    PartialOos,
    FullOos,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::Multitask => "multitask",
            TemplateKind::PartialOos => "partial_oos",
            TemplateKind::FullOos => "full_oos",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            TemplateKind::Multitask => "mt",
            TemplateKind::PartialOos => "po",
            TemplateKind::FullOos => "fo",
        }
    }
}

impl std::str::FromStr for TemplateKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "multitask" => Ok(TemplateKind::Multitask),
            "partial_oos" => Ok(TemplateKind::PartialOos),
            "full_oos" => Ok(TemplateKind::FullOos),
            other => Err(Error::Template(format!("unknown template kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub id: String,
    pub kind: TemplateKind,
    pub tasks: TaskSet,
    pub question: String,
    pub answer: String,
}

pub(crate) const LABEL: &str = "label";

/// Placeholder names in `text`, rejecting unbalanced or nested braces.
pub(crate) fn placeholders(text: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(Error::Template(format!("unbalanced '}}' in {text:?}")));
        }
        let tail = &rest[open + 1..];
        let close = tail
            .find(['{', '}'])
            .filter(|&i| tail.as_bytes()[i] == b'}')
            .ok_or_else(|| Error::Template(format!("unclosed '{{' in {text:?}")))?;
        out.insert(tail[..close].to_string());
        rest = &tail[close + 1..];
    }
    Ok(out)
}

/// Rough English check: nearly all letters are ASCII and the text contains
/// at least one very common English function word.
fn looks_english(text: &str) -> bool {
    let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.is_empty() {
        return false;
    }
    let ascii = letters.iter().filter(|c| c.is_ascii()).count();
    if (ascii as f64) < 0.95 * letters.len() as f64 {
        return false;
    }
    const COMMON: [&str; 24] = [
        "the", "is", "of", "and", "in", "what", "how", "which", "where", "it", "to", "a", "i",
        "does", "for", "with", "can", "not", "be", "this", "are", "its", "did", "should",
    ];
    text.split(|c: char| !c.is_ascii_alphabetic())
        .any(|w| COMMON.contains(&w.to_ascii_lowercase().as_str()))
}

impl Template {
    /// Check placeholder discipline for the template's kind.
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Template(format!("{}: {msg}", self.id)));
        let q = placeholders(&self.question)?;
        let a = placeholders(&self.answer)?;
        if !q.contains(LABEL) {
            return err("question must mention {label}".into());
        }
        if let Some(extra) = q.iter().find(|p| *p != LABEL) {
            return err(format!("question may only use {{label}}, found {{{extra}}}"));
        }
        let mut expected: BTreeSet<String> =
            self.tasks.tasks().map(|t| t.placeholder().to_string()).collect();
        match self.kind {
            TemplateKind::FullOos => {
                if !self.tasks.is_empty() {
                    return err("full_oos templates take no tasks".into());
                }
                if let Some(p) = a.iter().find(|p| *p != LABEL) {
                    return err(format!("full_oos answer uses task placeholder {{{p}}}"));
                }
            }
            _ => {
                if self.tasks.is_empty() {
                    return err("task set is empty".into());
                }
                expected.insert(LABEL.into());
                if a != expected {
                    return err(format!(
                        "answer placeholders {a:?} differ from those implied by tasks {expected:?}"
                    ));
                }
            }
        }
        if !looks_english(&self.question) || !looks_english(&self.answer) {
            return err("text does not look like English".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub templates: Vec<Template>,
    pub provenance: String,
}

const BUNDLED: &str = include_str!("../../data/templates.txt");

impl TemplateBank {
    /// The bundled bank: the fifteen canonical multi-task templates plus
    /// partial and fully out-of-scope templates.
    pub fn canonical() -> Self {
        Self::parse(BUNDLED, "bundled").expect("bundled bank is valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::path(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse and validate the bank text format.
    pub fn parse(text: &str, provenance: &str) -> Result<Self> {
        let mut kind: Option<TemplateKind> = None;
        let mut tasks: Option<TaskSet> = None;
        let mut pending_q: Option<String> = None;
        let mut templates = Vec::new();
        let mut counters = [0usize; 3];
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = n + 1;
            let fail = |m: &str| Error::Template(format!("{provenance}:{lineno}: {m}"));
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(v) = line.strip_prefix("kind:") {
                if pending_q.is_some() {
                    return Err(fail("question without answer"));
                }
                kind = Some(v.parse()?);
                tasks = None;
            } else if let Some(v) = line.strip_prefix("tasks:") {
                let parsed: Result<Vec<Task>> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse)
                    .collect();
                tasks = Some(TaskSet::from_tasks(parsed?));
            } else if let Some(q) = line.strip_prefix("Q:") {
                if pending_q.is_some() {
                    return Err(fail("two questions in a row"));
                }
                pending_q = Some(q.trim().to_string());
            } else if let Some(a) = line.strip_prefix("A:") {
                let question = pending_q.take().ok_or_else(|| fail("answer without question"))?;
                let kind = kind.ok_or_else(|| fail("missing kind: header"))?;
                let tasks = tasks.ok_or_else(|| fail("missing tasks: header"))?;
                let slot = kind as usize;
                counters[slot] += 1;
                let template = Template {
                    id: format!("{}-{:03}", kind.prefix(), counters[slot]),
                    kind,
                    tasks,
                    question,
                    answer: a.trim().to_string(),
                };
                template.validate()?;
                templates.push(template);
            } else {
                return Err(fail("expected kind:, tasks:, Q: or A:"));
            }
        }
        if pending_q.is_some() {
            return Err(Error::Template(format!("{provenance}: trailing question without answer")));
        }
        let bank = TemplateBank {
            templates,
            provenance: provenance.to_string(),
        };
        bank.check_capacity()?;
        Ok(bank)
    }

    /// Every nonempty task subset needs a multitask template, and both OOS
    /// kinds need at least one.
    pub fn check_capacity(&self) -> Result<()> {
        for set in TaskSet::all_nonempty() {
            if !self.of_kind(TemplateKind::Multitask).any(|t| t.tasks == set) {
                return Err(Error::BankCapacity(format!("no multitask template for {{{set}}}")));
            }
        }
        for kind in [TemplateKind::PartialOos, TemplateKind::FullOos] {
            if self.of_kind(kind).next().is_none() {
                return Err(Error::BankCapacity(format!("no {} template", kind.as_str())));
            }
        }
        Ok(())
    }

    pub fn of_kind(&self, kind: TemplateKind) -> impl Iterator<Item = &Template> {
        self.templates.iter().filter(move |t| t.kind == kind)
    }

    /// Serialise back to the text format, grouping consecutive templates that
    /// share kind and tasks.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut last: Option<(TemplateKind, TaskSet)> = None;
        for t in &self.templates {
            if last != Some((t.kind, t.tasks)) {
                if last.is_some() {
                    out.push('\n');
                }
                let names: Vec<&str> = t.tasks.tasks().map(Task::as_str).collect();
                out.push_str(&format!("kind: {}\ntasks: {}\n", t.kind.as_str(), names.join(", ")));
                last = Some((t.kind, t.tasks));
            }
            out.push_str(&format!("Q: {}\nA: {}\n", t.question, t.answer));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tpl(kind: TemplateKind, tasks: TaskSet, q: &str, a: &str) -> Template {
        Template {
            id: "t".into(),
            kind,
            tasks,
            question: q.into(),
            answer: a.into(),
        }
    }

    #[test]
    fn bundled_bank_is_complete() {
        let bank = TemplateBank::canonical();
        assert_eq!(bank.of_kind(TemplateKind::Multitask).count(), 15);
        assert_eq!(bank.of_kind(TemplateKind::PartialOos).count(), 15);
        assert!(bank.of_kind(TemplateKind::FullOos).count() >= 1);
        let sets: BTreeSet<TaskSet> = bank.of_kind(TemplateKind::Multitask).map(|t| t.tasks).collect();
        assert_eq!(sets.len(), 15);
        let ids: BTreeSet<&str> = bank.templates.iter().map(|t| t.id.as_str()).collect();
        assert_eq!(ids.len(), bank.templates.len());
    }

    #[test]
    fn text_round_trip() {
        let bank = TemplateBank::canonical();
        let again = TemplateBank::parse(&bank.to_text(), "again").unwrap();
        assert_eq!(again.templates, bank.templates);
    }

    #[test]
    fn placeholder_scanner() {
        let p = placeholders("a {label} b {volume}").unwrap();
        assert_eq!(p.into_iter().collect::<Vec<_>>(), ["label", "volume"]);
        assert!(placeholders("broken {label").is_err());
        assert!(placeholders("broken label}").is_err());
        assert!(placeholders("{a{b}}").is_err());
    }

    #[test]
    fn validation_rules() {
        let vol = TaskSet::from_tasks([Task::Volume]);
        let ok = tpl(
            TemplateKind::Multitask,
            vol,
            "How big is {label}?",
            "The volume of {label} is {volume}.",
        );
        ok.validate().unwrap();

        let missing = tpl(TemplateKind::Multitask, vol, "How big is {label}?", "It is big.");
        assert!(missing.validate().is_err());
        let extra = tpl(
            TemplateKind::Multitask,
            vol,
            "How big is {label}?",
            "The {label} is {volume} in {regions}.",
        );
        assert!(extra.validate().is_err());
        let leaky_q = tpl(
            TemplateKind::Multitask,
            vol,
            "Is {label} {volume}?",
            "The {label} is {volume}.",
        );
        assert!(leaky_q.validate().is_err());
        let no_label = tpl(TemplateKind::Multitask, vol, "How big is it?", "The {label} is {volume}.");
        assert!(no_label.validate().is_err());
        let full_with_task = tpl(
            TemplateKind::FullOos,
            TaskSet::EMPTY,
            "What is the prognosis for {label}?",
            "It is {volume}.",
        );
        assert!(full_with_task.validate().is_err());
        let foreign = tpl(
            TemplateKind::FullOos,
            TaskSet::EMPTY,
            "Wie groß ist {label}?",
            "Ich kann das nicht beantworten über {label}.",
        );
        assert!(foreign.validate().is_err());
    }

    #[test]
    fn capacity_errors() {
        let text = "kind: multitask\ntasks: volume\nQ: How big is {label}?\nA: The {label} is {volume}.\n";
        assert!(matches!(TemplateBank::parse(text, "t"), Err(Error::BankCapacity(_))));
    }

    #[test]
    fn format_errors() {
        assert!(TemplateBank::parse("Q: What is {label}?\n", "t").is_err());
        assert!(TemplateBank::parse("A: The {label}.\n", "t").is_err());
        assert!(TemplateBank::parse("kind: other\n", "t").is_err());
        assert!(TemplateBank::parse("tasks: colour\n", "t").is_err());
        assert!(TemplateBank::parse("hello\n", "t").is_err());
    }
}
