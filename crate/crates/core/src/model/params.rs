use std::collections::BTreeMap;

use super::config::Component;
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// Weights lifted into one graph as leaves.
#[derive(Clone, Debug, Default)]
pub struct Params {
    vars: BTreeMap<String, Var>,
}

impl Params {
    /// Binds every tensor of the listed components (all if empty).
    pub fn bind(g: &mut Graph, w: &ModelWeights, components: &[Component]) -> Result<Self> {
        let mut vars = BTreeMap::new();
        for (name, t) in w.iter() {
            let keep = components.is_empty() || Component::of(name).is_some_and(|c| components.contains(&c));
            if keep {
                vars.insert(name.clone(), g.param(t.clone())?);
            }
        }
        Ok(Params { vars })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    /// Replaces one binding, e.g. with the probe variable of a gradient check.
    pub fn set(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
