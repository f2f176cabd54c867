//! The templated sentence grammar shared by text primitives, prompts and the
//! decoder. One fact per sentence; sentences end with a period.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::microworld::scene::{Category, Color};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    pub fn axis(self) -> Axis {
        match self {
            Relation::LeftOf | Relation::RightOf => Axis::Horizontal,
            Relation::Above | Relation::Below => Axis::Vertical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl Axis {
    /// Answer labels in alphabetical order; the first is the abstain default.
    pub fn choices(self) -> [&'static str; 2] {
        match self {
            Axis::Horizontal => ["left", "right"],
            Axis::Vertical => ["above", "below"],
        }
    }

    /// Relation named by an answer label.
    pub fn relation(self, label: &str) -> Option<Relation> {
        match (self, label) {
            (Axis::Horizontal, "left") => Some(Relation::LeftOf),
            (Axis::Horizontal, "right") => Some(Relation::RightOf),
            (Axis::Vertical, "above") => Some(Relation::Above),
            (Axis::Vertical, "below") => Some(Relation::Below),
            _ => None,
        }
    }

    pub fn label(self, rel: Relation) -> &'static str {
        match rel {
            Relation::LeftOf => "left",
            Relation::RightOf => "right",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrant {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::UpperLeft,
        Quadrant::UpperRight,
        Quadrant::LowerLeft,
        Quadrant::LowerRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::UpperLeft => "upper-left",
            Quadrant::UpperRight => "upper-right",
            Quadrant::LowerLeft => "lower-left",
            Quadrant::LowerRight => "lower-right",
        }
    }

    /// Quadrant of image point `(u, v)` in a `width × height` image.
    pub fn of_point(u: f64, v: f64, width: f64, height: f64) -> Quadrant {
        match (v < height / 2.0, u < width / 2.0) {
            (true, true) => Quadrant::UpperLeft,
            (true, false) => Quadrant::UpperRight,
            (false, true) => Quadrant::LowerLeft,
            (false, false) => Quadrant::LowerRight,
        }
    }
}

/// A single statement about the scene. Views are 1-based; view 1 is the
/// principal view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum Fact {
    Attribute { id: u32, color: Color, category: Category },
    CategoryCount { category: Category, count: usize },
    TotalCount { count: usize },
    Spatial { a: u32, relation: Relation, b: u32, view: u32 },
    InQuadrant { id: u32, quadrant: Quadrant, view: u32 },
    InFront { front: u32, back: u32, view: u32 },
    Occludes { front: u32, back: u32, view: u32 },
}

impl Fact {
    /// Front/back pair if this fact constrains depth ordering.
    pub fn depth_order(&self) -> Option<(u32, u32, u32)> {
        match *self {
            Fact::InFront { front, back, view } | Fact::Occludes { front, back, view } => {
                Some((front, back, view))
            }
            _ => None,
        }
    }

    /// Whitespace-token cost of the rendered sentence.
    pub fn token_count(&self) -> usize {
        self.to_string().split_whitespace().count()
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::Attribute {
                id,
                color,
                category,
            } => write!(f, "object {id} is a {color} {category}"),
            Fact::CategoryCount { category, count } => {
                write!(f, "there are {count} {category} objects")
            }
            Fact::TotalCount { count } => write!(f, "there are {count} objects in total"),
            Fact::Spatial {
                a,
                relation,
                b,
                view,
            } => write!(f, "object {a} is {} object {b} in view {view}", relation.phrase()),
            Fact::InQuadrant { id, quadrant, view } => write!(
                f,
                "object {id} is in the {} quadrant of view {view}",
                quadrant.as_str()
            ),
            Fact::InFront { front, back, view } => {
                write!(f, "object {front} is in front of object {back} in view {view}")
            }
            Fact::Occludes { front, back, view } => {
                write!(f, "object {front} occludes object {back} in view {view}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError(pub String);

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot parse {:?}", self.0)
    }
}

impl std::error::Error for ParseError {}

fn num<T: FromStr>(s: &str) -> Option<T> {
    s.parse().ok()
}

fn parse_fact(words: &[&str]) -> Option<Fact> {
    match words {
        ["object", id, "is", "a", color, category] => Some(Fact::Attribute {
            id: num(id)?,
            color: Color::parse(color)?,
            category: Category::parse(category)?,
        }),
        ["there", "are", n, "objects", "in", "total"] => Some(Fact::TotalCount { count: num(n)? }),
        ["there", "are", n, category, "objects"] => Some(Fact::CategoryCount {
            category: Category::parse(category)?,
            count: num(n)?,
        }),
        ["object", a, "is", "in", "front", "of", "object", b, "in", "view", v] => Some(Fact::InFront {
            front: num(a)?,
            back: num(b)?,
            view: num(v)?,
        }),
        ["object", a, "occludes", "object", b, "in", "view", v] => Some(Fact::Occludes {
            front: num(a)?,
            back: num(b)?,
            view: num(v)?,
        }),
        ["object", id, "is", "in", "the", q, "quadrant", "of", "view", v] => Some(Fact::InQuadrant {
            id: num(id)?,
            quadrant: Quadrant::ALL.into_iter().find(|x| x.as_str() == *q)?,
            view: num(v)?,
        }),
        ["object", a, "is", side, "of", "object", b, "in", "view", v] => Some(Fact::Spatial {
            a: num(a)?,
            relation: match *side {
                "left" => Relation::LeftOf,
                "right" => Relation::RightOf,
                _ => return None,
            },
            b: num(b)?,
            view: num(v)?,
        }),
        ["object", a, "is", side, "object", b, "in", "view", v] => Some(Fact::Spatial {
            a: num(a)?,
            relation: match *side {
                "above" => Relation::Above,
                "below" => Relation::Below,
                _ => return None,
            },
            b: num(b)?,
            view: num(v)?,
        }),
        _ => None,
    }
}

impl FromStr for Fact {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim().trim_end_matches('.');
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        parse_fact(&words).ok_or_else(|| ParseError(s.to_string()))
    }
}

/// Renders facts as a paragraph, one sentence per fact, after an optional header.
pub fn render_facts(header: Option<&str>, facts: &[Fact]) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(h);
    }
    for fact in facts {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&fact.to_string());
        out.push('.');
    }
    out
}

/// Every recognisable fact in free text. Unrecognised sentences are skipped.
pub fn extract_facts(text: &str) -> Vec<Fact> {
    text.split('.')
        .filter_map(|s| s.parse::<Fact>().ok())
        .collect()
}

/// Structured task query; `Display` produces the canonical prompt text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum Query {
    Spatial { view: u32, a: u32, b: u32, axis: Axis },
    Count { category: Option<Category> },
    Depth { view: u32 },
    Generate { atoms: Vec<Fact> },
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Spatial { view, a, b, axis } => {
                let [x, y] = axis.choices();
                write!(f, "in view {view}, is object {a} {x} or {y} of object {b}?")
            }
            Query::Count { category: Some(c) } => write!(f, "how many {c} objects are there?"),
            Query::Count { category: None } => write!(f, "how many objects are there?"),
            Query::Depth { view } => write!(f, "estimate the depth map of view {view}."),
            Query::Generate { atoms } => {
                let parts: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
                write!(f, "generate an image where: {}.", parts.join("; "))
            }
        }
    }
}

impl FromStr for Query {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError(s.to_string());
        let t = s.trim();
        if let Some(rest) = t.strip_prefix("generate an image where: ") {
            let body = rest.strip_suffix('.').ok_or_else(err)?;
            let atoms = body
                .split("; ")
                .map(|a| a.parse::<Fact>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| err())?;
            if atoms.is_empty() {
                return Err(err());
            }
            return Ok(Query::Generate { atoms });
        }
        let words: Vec<&str> = t
            .trim_end_matches(['?', '.'])
            .split_whitespace()
            .collect();
        match words.as_slice() {
            ["in", "view", v, "is", "object", a, x, "or", y, "of", "object", b] => {
                let v = v.strip_suffix(',').ok_or_else(err)?;
                let axis = match (*x, *y) {
                    ("left", "right") => Axis::Horizontal,
                    ("above", "below") => Axis::Vertical,
                    _ => return Err(err()),
                };
                Ok(Query::Spatial {
                    view: num(v).ok_or_else(err)?,
                    a: num(a).ok_or_else(err)?,
                    b: num(b).ok_or_else(err)?,
                    axis,
                })
            }
            ["how", "many", "objects", "are", "there"] => Ok(Query::Count { category: None }),
            ["how", "many", c, "objects", "are", "there"] => Ok(Query::Count {
                category: Some(Category::parse(c).ok_or_else(err)?),
            }),
            ["estimate", "the", "depth", "map", "of", "view", v] => Ok(Query::Depth {
                view: num(v).ok_or_else(err)?,
            }),
            _ => Err(err()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_fact() -> impl Strategy<Value = Fact> {
        let id = 1u32..40;
        let view = 1u32..4;
        let cat = (0..Category::ALL.len()).prop_map(|i| Category::ALL[i]);
        let color = (0..Color::ALL.len()).prop_map(|i| Color::ALL[i]);
        let rel = prop_oneof![
            Just(Relation::LeftOf),
            Just(Relation::RightOf),
            Just(Relation::Above),
            Just(Relation::Below)
        ];
        let quad = (0..4usize).prop_map(|i| Quadrant::ALL[i]);
        prop_oneof![
            (id.clone(), color, cat.clone()).prop_map(|(id, color, category)| Fact::Attribute {
                id,
                color,
                category
            }),
            (cat, 0usize..40).prop_map(|(category, count)| Fact::CategoryCount { category, count }),
            (0usize..40).prop_map(|count| Fact::TotalCount { count }),
            (id.clone(), rel, id.clone(), view.clone())
                .prop_map(|(a, relation, b, view)| Fact::Spatial { a, relation, b, view }),
            (id.clone(), quad, view.clone())
                .prop_map(|(id, quadrant, view)| Fact::InQuadrant { id, quadrant, view }),
            (id.clone(), id.clone(), view.clone())
                .prop_map(|(front, back, view)| Fact::InFront { front, back, view }),
            (id.clone(), id, view).prop_map(|(front, back, view)| Fact::Occludes { front, back, view }),
        ]
    }

    proptest! {
        #[test]
        fn facts_round_trip_through_text(facts in proptest::collection::vec(arb_fact(), 0..12)) {
            let text = render_facts(Some("scene notes."), &facts);
            prop_assert_eq!(extract_facts(&text), facts.clone());
            if !facts.is_empty() {
                let q = Query::Generate { atoms: facts };
                prop_assert_eq!(q.to_string().parse::<Query>().unwrap(), q);
            }
        }
    }

    #[test]
    fn sentence_shapes_and_costs() {
        let f = Fact::Spatial {
            a: 3,
            relation: Relation::LeftOf,
            b: 5,
            view: 1,
        };
        assert_eq!(f.to_string(), "object 3 is left of object 5 in view 1");
        assert_eq!(f.token_count(), 10);
        let f = Fact::Attribute {
            id: 2,
            color: Color::Red,
            category: Category::Cube,
        };
        assert_eq!(f.to_string(), "object 2 is a red cube");
    }

    #[test]
    fn queries_round_trip() {
        for q in [
            Query::Spatial {
                view: 2,
                a: 3,
                b: 7,
                axis: Axis::Horizontal,
            },
            Query::Spatial {
                view: 1,
                a: 1,
                b: 2,
                axis: Axis::Vertical,
            },
            Query::Count {
                category: Some(Category::Sphere),
            },
            Query::Count { category: None },
            Query::Depth { view: 1 },
        ] {
            assert_eq!(q.to_string().parse::<Query>().unwrap(), q, "{q}");
        }
        assert_eq!(
            Query::Count {
                category: Some(Category::Sphere)
            }
            .to_string(),
            "how many sphere objects are there?"
        );
        assert!("what is this?".parse::<Query>().is_err());
    }

    #[test]
    fn unknown_sentences_are_skipped() {
        let facts = extract_facts("hello there. object 1 occludes object 2 in view 1. nonsense words.");
        assert_eq!(
            facts,
            vec![Fact::Occludes {
                front: 1,
                back: 2,
                view: 1
            }]
        );
    }
}
