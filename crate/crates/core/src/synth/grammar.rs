use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::catalog::{ADJECTIVES, NOUNS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    NextTo,
    Under,
    Between,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::LeftOf,
        Relation::RightOf,
        Relation::InFrontOf,
        Relation::Behind,
        Relation::NextTo,
        Relation::Under,
        Relation::Between,
    ];

    pub fn arity(self) -> usize {
        if self == Relation::Between {
            2
        } else {
            1
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::LeftOf => "left-of",
            Relation::RightOf => "right-of",
            Relation::InFrontOf => "in-front-of",
            Relation::Behind => "behind",
            Relation::NextTo => "next-to",
            Relation::Under => "under",
            Relation::Between => "between",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "to the left of",
            Relation::RightOf => "to the right of",
            Relation::InFrontOf => "in front of",
            Relation::Behind => "behind",
            Relation::NextTo => "next to",
            Relation::Under => "under",
            Relation::Between => "between",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown relation `{s}`"))
    }
}

pub const VERBS: &[&str] = &["place", "put", "add"];

/// Structured form of a generated prompt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub verb: String,
    pub adjective: String,
    pub noun: String,
    pub relation: Relation,
    /// Anchor references: `"me"` for the human, otherwise an object noun.
    pub anchors: Vec<String>,
}

fn reference(anchor: &str) -> String {
    if anchor == "me" {
        "me".to_string()
    } else {
        format!("the {anchor}")
    }
}

impl PromptSpec {
    pub fn render(&self) -> String {
        let object = if self.adjective.is_empty() {
            self.noun.clone()
        } else {
            format!("{} {}", self.adjective, self.noun)
        };
        let anchors = match self.anchors.as_slice() {
            [a, b] => format!("{} and {}", reference(a), reference(b)),
            other => other.iter().map(|a| reference(a)).collect::<Vec<_>>().join(" and "),
        };
        format!("{} a {} {} {}", self.verb, object, self.relation.phrase(), anchors)
    }
}

impl PromptSpec {
    /// Parses text produced by the grammar (case-insensitive); `None` for
    /// anything else.
    pub fn parse(text: &str) -> Option<PromptSpec> {
        let tokens = tokenize(text);
        let mut rest = tokens.as_slice();
        let verb = rest.first().filter(|v| VERBS.contains(&v.as_str()))?.clone();
        rest = &rest[1..];
        if rest.first().map(String::as_str) != Some("a") {
            return None;
        }
        rest = &rest[1..];
        let mut adjective = String::new();
        if let Some(a) = rest.first().filter(|a| ADJECTIVES.contains(&a.as_str())) {
            adjective = a.clone();
            rest = &rest[1..];
        }
        let noun = rest.first().filter(|n| NOUNS.contains(&n.as_str()))?.clone();
        rest = &rest[1..];
        let (relation, after) = Relation::ALL.into_iter().find_map(|r| {
            let phrase = tokenize(r.phrase());
            (rest.len() >= phrase.len() && rest[..phrase.len()] == phrase[..]).then(|| (r, &rest[phrase.len()..]))
        })?;
        let mut anchors = Vec::new();
        let mut rest = after;
        loop {
            match rest {
                [me, tail @ ..] if me == "me" => {
                    anchors.push("me".to_string());
                    rest = tail;
                }
                [the, n, tail @ ..] if the == "the" && NOUNS.contains(&n.as_str()) => {
                    anchors.push(n.clone());
                    rest = tail;
                }
                _ => return None,
            }
            match rest {
                [] => break,
                [and, tail @ ..] if and == "and" => rest = tail,
                _ => return None,
            }
        }
        (anchors.len() == relation.arity()).then_some(PromptSpec {
            verb,
            adjective,
            noun,
            relation,
            anchors,
        })
    }
}

/// Lower-cases and splits on anything but letters, digits and hyphens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Closed vocabulary with a reserved unknown entry at index 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Every word the prompt grammar can emit.
    pub fn grammar() -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        for v in VERBS {
            words.insert(v.to_string());
        }
        for w in NOUNS.iter().chain(ADJECTIVES) {
            words.insert(w.to_string());
        }
        for r in Relation::ALL {
            words.extend(tokenize(r.phrase()));
        }
        for w in ["a", "the", "me", "and"] {
            words.insert(w.to_string());
        }
        Self::from_tokens(words.into_iter().collect())
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all = vec![UNKNOWN_TOKEN.to_string()];
        all.extend(tokens.into_iter().filter(|t| t != UNKNOWN_TOKEN));
        Self { tokens: all }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of `text` plus the tokens that were not in the vocabulary.
    pub fn encode(&self, text: &str) -> (Vec<usize>, Vec<String>) {
        let mut unknown = Vec::new();
        let ids = tokenize(text)
            .into_iter()
            .map(|t| match self.tokens.iter().position(|v| *v == t) {
                Some(i) => i,
                None => {
                    unknown.push(t);
                    0
                }
            })
            .collect();
        (ids, unknown)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_tokenizes() {
        let p = PromptSpec {
            verb: "place".into(),
            adjective: "one-seater".into(),
            noun: "sofa".into(),
            relation: Relation::Between,
            anchors: vec!["me".into(), "desk".into()],
        };
        let text = p.render();
        assert_eq!(text, "place a one-seater sofa between me and the desk");
        let vocab = Vocabulary::grammar();
        let (ids, unknown) = vocab.encode(&text);
        assert!(unknown.is_empty());
        assert_eq!(ids.len(), 9);
        let (_, unknown) = vocab.encode("place a piano");
        assert_eq!(unknown, vec!["piano".to_string()]);
    }

    #[test]
    fn parse_inverts_render() {
        for (adjective, relation, anchors) in [
            ("one-seater", Relation::Between, vec!["me", "desk"]),
            ("", Relation::LeftOf, vec!["me"]),
            ("tall", Relation::InFrontOf, vec!["shelf"]),
        ] {
            let spec = PromptSpec {
                verb: "put".into(),
                adjective: adjective.into(),
                noun: "lamp".into(),
                relation,
                anchors: anchors.into_iter().map(String::from).collect(),
            };
            assert_eq!(PromptSpec::parse(&spec.render()), Some(spec));
        }
        assert_eq!(PromptSpec::parse("place a piano to the left of me"), None);
        assert_eq!(PromptSpec::parse("place a desk between me"), None);
    }

    #[test]
    fn relation_round_trip() {
        for r in Relation::ALL {
            assert_eq!(r.as_str().parse::<Relation>().unwrap(), r);
        }
    }
}
