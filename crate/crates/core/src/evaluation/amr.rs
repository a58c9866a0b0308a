//! Conversion of function-application parses into AMR-style triples.
//!
//! Every function application becomes an entity (`$0` is the root, then
//! pre-order). Each entity gets an `instance` triple naming its function.
//! Keyword arguments `:name value` become `name` relations; positional
//! arguments become `ARG0`, `ARG1`, ... by position among the positional
//! arguments. Nested applications are entity targets, anything else is a
//! constant target.

use std::fmt;

use crate::error::{Error, Result};
use crate::evaluation::sexpr::SExpr;

pub const INSTANCE: &str = "instance";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Entity(usize),
    Constant(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub relation: String,
    pub source: usize,
    pub target: Target,
}

impl Triple {
    pub fn new(relation: impl Into<String>, source: usize, target: Target) -> Self {
        Self {
            relation: relation.into(),
            source,
            target,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Target::Entity(t) => write!(f, "{}(${}, ${})", self.relation, self.source, t),
            Target::Constant(c) => write!(f, "{}(${}, {})", self.relation, self.source, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AmrGraph {
    entities: usize,
    triples: Vec<Triple>,
}

impl AmrGraph {
    /// Validates that entity ids are dense and that each entity has exactly
    /// one `instance` triple.
    pub fn new(entities: usize, triples: Vec<Triple>) -> Result<Self> {
        let mut instances = vec![0usize; entities];
        for t in &triples {
            if t.source >= entities {
                return Err(Error::Conversion(format!("triple {t} references unknown entity")));
            }
            if let Target::Entity(e) = t.target {
                if e >= entities {
                    return Err(Error::Conversion(format!("triple {t} references unknown entity")));
                }
            }
            if t.relation == INSTANCE {
                if !matches!(t.target, Target::Constant(_)) {
                    return Err(Error::Conversion(format!("instance triple {t} must name a label")));
                }
                instances[t.source] += 1;
            }
        }
        if let Some(e) = instances.iter().position(|&n| n != 1) {
            return Err(Error::Conversion(format!(
                "entity ${e} has {} instance triples",
                instances[e]
            )));
        }
        Ok(Self { entities, triples })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entity_count(&self) -> usize {
        self.entities
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn label(&self, entity: usize) -> Option<&str> {
        self.triples.iter().find_map(|t| match (&t.target, t.source == entity && t.relation == INSTANCE) {
            (Target::Constant(c), true) => Some(c.as_str()),
            _ => None,
        })
    }
}

/// Converts a parse into its AMR graph.
pub fn to_amr(parse: &SExpr) -> Result<AmrGraph> {
    let mut triples = Vec::new();
    let mut next = 0;
    visit(parse, &mut next, &mut triples)?;
    AmrGraph::new(next, triples)
}

fn visit(node: &SExpr, next: &mut usize, triples: &mut Vec<Triple>) -> Result<usize> {
    let items = match node {
        SExpr::List(items) => items,
        other => return Err(Error::Conversion(format!("expected a function application, found {other}"))),
    };
    let head = match items.first() {
        Some(SExpr::Symbol(h)) if !h.starts_with(':') => h,
        Some(other) => return Err(Error::Conversion(format!("function head must be a symbol, found {other}"))),
        None => return Err(Error::Conversion("empty application ()".into())),
    };
    let id = *next;
    *next += 1;
    triples.push(Triple::new(INSTANCE, id, Target::Constant(head.clone())));

    let mut positional = 0;
    let mut i = 1;
    while i < items.len() {
        let (relation, value) = if items[i].is_keyword() {
            let key = match &items[i] {
                SExpr::Symbol(k) => k[1..].to_string(),
                _ => unreachable!(),
            };
            match items.get(i + 1) {
                Some(v) if !v.is_keyword() => {
                    i += 2;
                    (key, v)
                }
                _ => {
                    return Err(Error::Conversion(format!(
                        "keyword :{key} of {head} has no value"
                    )))
                }
            }
        } else {
            let rel = format!("ARG{positional}");
            positional += 1;
            i += 1;
            (rel, &items[i - 1])
        };
        match value {
            SExpr::List(_) => {
                let child = *next;
                triples.push(Triple::new(relation, id, Target::Entity(child)));
                visit(value, next, triples)?;
            }
            atom => triples.push(Triple::new(relation, id, Target::Constant(atom.to_string()))),
        }
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::sexpr::parse_sexpr;

    #[test]
    fn leaf_function() {
        let g = to_amr(&parse_sexpr("(f)").unwrap()).unwrap();
        assert_eq!(g.entity_count(), 1);
        assert_eq!(g.triples(), &[Triple::new(INSTANCE, 0, Target::Constant("f".into()))]);
    }

    #[test]
    fn positional_nesting_uses_arg_index() {
        let g = to_amr(&parse_sexpr("(g (h))").unwrap()).unwrap();
        let rendered: Vec<String> = g.triples().iter().map(Triple::to_string).collect();
        assert_eq!(rendered, vec!["instance($0, g)", "ARG0($0, $1)", "instance($1, h)"]);
        let g = to_amr(&parse_sexpr("(g 1 :k 2 3)").unwrap()).unwrap();
        let rendered: Vec<String> = g.triples().iter().map(Triple::to_string).collect();
        assert_eq!(rendered, vec!["instance($0, g)", "ARG0($0, 1)", "k($0, 2)", "ARG1($0, 3)"]);
    }

    #[test]
    fn dangling_keyword_is_rejected() {
        assert!(matches!(to_amr(&parse_sexpr("(f :a)").unwrap()), Err(Error::Conversion(_))));
        assert!(matches!(to_amr(&parse_sexpr("(f :a :b 1)").unwrap()), Err(Error::Conversion(_))));
    }

    #[test]
    fn non_applications_are_rejected() {
        for text in ["x", "()", "(\"s\" 1)", "((f) 1)"] {
            assert!(to_amr(&parse_sexpr(text).unwrap()).is_err(), "{text}");
        }
    }

    #[test]
    fn graph_validation() {
        let t = |r: &str, s, c: &str| Triple::new(r, s, Target::Constant(c.into()));
        assert!(AmrGraph::new(1, vec![t(INSTANCE, 0, "a"), t(INSTANCE, 0, "b")]).is_err());
        assert!(AmrGraph::new(2, vec![t(INSTANCE, 0, "a")]).is_err());
        assert!(AmrGraph::new(1, vec![t(INSTANCE, 0, "a"), t("r", 1, "b")]).is_err());
        let g = AmrGraph::new(1, vec![t(INSTANCE, 0, "a")]).unwrap();
        assert_eq!(g.label(0), Some("a"));
    }
}
