use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{DemoMode, DemoSet, PromptError};
use crate::domain::Instance;

const RD_V1: &str = include_str!("../../templates/rd_v1.toml");
const RP_V1: &str = include_str!("../../templates/rp_v1.toml");

/// A versioned prompt skeleton. Fields are concatenated in declaration order;
/// `constraint` is omitted when there are no candidate relations and
/// `demonstrations_heading` when there are no demonstrations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub preamble: String,
    pub constraint: String,
    pub relation_separator: String,
    pub demonstrations_heading: String,
    pub demonstration: String,
    pub query: String,
}

impl PromptTemplate {
    pub fn from_toml_str(src: &str) -> Result<Self, PromptError> {
        toml::from_str(src).map_err(|e| PromptError::Template(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    pub fn bundled_rd() -> &'static PromptTemplate {
        static T: OnceLock<PromptTemplate> = OnceLock::new();
        T.get_or_init(|| Self::from_toml_str(RD_V1).expect("bundled rd template parses"))
    }

    pub fn bundled_rp() -> &'static PromptTemplate {
        static T: OnceLock<PromptTemplate> = OnceLock::new();
        T.get_or_init(|| Self::from_toml_str(RP_V1).expect("bundled rp template parses"))
    }

    /// The text in front of the candidate list on the constraint line.
    pub fn constraint_prefix(&self) -> &str {
        self.constraint.split("{relations}").next().unwrap_or_default()
    }

    pub fn render(&self, demos: &DemoSet, test: &Instance) -> String {
        let mut out = String::with_capacity(256 + demos.demos.len() * 192);
        out.push_str(&self.preamble);
        let relations = demos.candidate_relations();
        if !relations.is_empty() {
            let listed = relations.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(&self.relation_separator);
            fill(&mut out, &self.constraint, &HashMap::from([("relations", listed.as_str())]));
        }
        if !demos.demos.is_empty() {
            out.push_str(&self.demonstrations_heading);
        }
        for demo in &demos.demos {
            let i = &demo.instance;
            let vars = HashMap::from([
                ("text", i.text.as_str()),
                ("head", i.head.as_str()),
                ("tail", i.tail.as_str()),
                ("relation", demo.relation.as_str()),
            ]);
            fill(&mut out, &self.demonstration, &vars);
        }
        let vars = HashMap::from([("text", test.text.as_str()), ("head", test.head.as_str()), ("tail", test.tail.as_str())]);
        fill(&mut out, &self.query, &vars);
        out
    }
}

/// The RD and RP templates used for a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub rd: PromptTemplate,
    pub rp: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Self { rd: PromptTemplate::bundled_rd().clone(), rp: PromptTemplate::bundled_rp().clone() }
    }
}

impl Templates {
    pub fn for_mode(&self, mode: DemoMode) -> &PromptTemplate {
        match mode {
            DemoMode::Rd => &self.rd,
            DemoMode::Rp => &self.rp,
        }
    }

    pub fn render(&self, demos: &DemoSet, test: &Instance) -> String {
        self.for_mode(demos.mode).render(demos, test)
    }
}

/// Renders with the bundled template for the set's mode.
pub fn render_prompt(demos: &DemoSet, test: &Instance) -> String {
    match demos.mode {
        DemoMode::Rd => PromptTemplate::bundled_rd().render(demos, test),
        DemoMode::Rp => PromptTemplate::bundled_rp().render(demos, test),
    }
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn fill(out: &mut String, template: &str, vars: &HashMap<&str, &str>) {
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').map(|close| (&after[..close], close)) {
            Some((name, close)) if vars.contains_key(name) => {
                out.push_str(vars[name]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
}
