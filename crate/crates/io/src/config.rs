//! Run configuration, read from JSON.

use std::collections::{BTreeMap, BTreeSet};

use cck_core::{Annotation, DependencyRule, EmConfig, LabelSpace, ModelKind, ValidationError};
use serde::{Deserialize, Serialize};

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model", with = "model_name")]
    pub model: ModelKind,
    /// Restrict the run to these questions. All questions when absent.
    #[serde(default)]
    pub questions: Option<Vec<String>>,
    #[serde(default)]
    pub em: EmSettings,
    #[serde(default)]
    pub dependencies_enabled: bool,
    #[serde(default)]
    pub label_spaces: Vec<LabelSpaceDecl>,
    #[serde(default)]
    pub dependencies: Vec<DependencyDecl>,
    #[serde(default)]
    pub seed: u64,
    /// Copy the (normalized) inputs into the bundle under `inputs/`.
    #[serde(default)]
    pub echo_inputs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSettings {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpaceDecl {
    pub question_id: String,
    pub real_classes: Vec<String>,
    /// Defaults to the real classes.
    #[serde(default)]
    pub reported_labels: Option<Vec<String>>,
    /// Reported label to class name, `null` to exclude. Unlisted labels must
    /// be class names.
    #[serde(default)]
    pub mapping: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyDecl {
    pub question_id: String,
    pub depends_on: String,
    pub excluding_labels: Vec<String>,
}

fn default_model() -> ModelKind {
    ModelKind::Mm
}
fn default_tol() -> f64 {
    EmConfig::default().tol
}
fn default_max_iter() -> usize {
    EmConfig::default().max_iter
}
fn default_beta() -> f64 {
    EmConfig::default().beta
}

impl Default for EmSettings {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            beta: default_beta(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: default_model(),
            questions: None,
            em: EmSettings::default(),
            dependencies_enabled: false,
            label_spaces: Vec::new(),
            dependencies: Vec::new(),
            seed: 0,
            echo_inputs: false,
        }
    }
}

mod model_name {
    use cck_core::ModelKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &ModelKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ModelKind, D::Error> {
        let name = String::deserialize(d)?;
        name.parse().map_err(serde::de::Error::custom)
    }
}

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, FormatError> {
        let config: Self = serde_json::from_slice(bytes)
            .map_err(|e| FormatError::InvalidConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Canonical JSON text, used for the manifest echo.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<(), FormatError> {
        let em = &self.em;
        if !(em.tol > 0.0) || !em.tol.is_finite() {
            return Err(FormatError::InvalidConfig("em.tol must be > 0".into()));
        }
        if em.max_iter < 1 {
            return Err(FormatError::InvalidConfig("em.max_iter must be >= 1".into()));
        }
        if !(em.beta >= 0.0) || !em.beta.is_finite() {
            return Err(FormatError::InvalidConfig("em.beta must be >= 0".into()));
        }
        Ok(())
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            tol: self.em.tol,
            max_iter: self.em.max_iter,
            beta: self.em.beta,
        }
    }

    /// Declared label spaces, plus an identity space for every question that
    /// appears in `annotations` without a declaration. Inferred classes are
    /// the distinct labels in sorted order.
    pub fn label_spaces(&self, annotations: &[Annotation]) -> Result<Vec<LabelSpace>, ValidationError> {
        let mut spaces = Vec::new();
        let mut declared = BTreeSet::new();
        for d in &self.label_spaces {
            declared.insert(d.question_id.as_str());
            let reported = d.reported_labels.clone().unwrap_or_else(|| d.real_classes.clone());
            spaces.push(LabelSpace::from_named_mapping(
                d.question_id.clone(),
                reported,
                d.real_classes.clone(),
                &d.mapping,
            )?);
        }
        let mut inferred: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for a in annotations {
            if !declared.contains(a.question_id.as_str()) {
                inferred
                    .entry(&a.question_id)
                    .or_default()
                    .insert(&a.reported_label);
            }
        }
        for (q, labels) in inferred {
            spaces.push(LabelSpace::identity(
                q,
                labels.into_iter().map(str::to_string).collect(),
            )?);
        }
        Ok(spaces)
    }

    pub fn dependency_rules(&self) -> Vec<DependencyRule> {
        self.dependencies
            .iter()
            .map(|d| DependencyRule {
                question_id: d.question_id.clone(),
                depends_on: d.depends_on.clone(),
                excluding_labels: d.excluding_labels.iter().cloned().collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        assert_eq!(RunConfig::from_json(b"{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json(br#"{"modle":"mm"}"#).is_err());
        assert!(RunConfig::from_json(br#"{"model":"em"}"#).is_err());
        assert!(RunConfig::from_json(br#"{"em":{"tol":0}}"#).is_err());
        assert!(RunConfig::from_json(br#"{"em":{"max_iter":0}}"#).is_err());
        assert!(RunConfig::from_json(br#"{"em":{"beta":-1}}"#).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::from_json(
            br#"{"model":"ds","questions":["q1"],"em":{"tol":1e-6,"max_iter":50,"beta":0},
                "dependencies_enabled":true,
                "label_spaces":[{"question_id":"q1","real_classes":["yes","no"],
                                 "reported_labels":["yes","no","n/a"],"mapping":{"n/a":null}}],
                "dependencies":[{"question_id":"q2","depends_on":"q1","excluding_labels":["no"]}],
                "seed":7,"echo_inputs":true}"#,
        )
        .unwrap();
        assert_eq!(c.model, ModelKind::Ds);
        assert_eq!(RunConfig::from_json(c.to_json().as_bytes()).unwrap(), c);
    }

    #[test]
    fn inferred_spaces_are_sorted() {
        let a = vec![
            Annotation::new("1", "t1", "w1", "q", "b"),
            Annotation::new("2", "t1", "w2", "q", "a"),
            Annotation::new("3", "t1", "w2", "q", "b"),
        ];
        let spaces = RunConfig::default().label_spaces(&a).unwrap();
        assert_eq!(spaces.len(), 1);
        assert_eq!(spaces[0].classes(), ["a", "b"]);
    }
}
