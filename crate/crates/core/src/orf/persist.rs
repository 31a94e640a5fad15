//! Model file: a short text header followed by a JSON body.
//!
//! ```text
//! prescribe-orf 1
//! dictionary_hash <hex>
//! hyperparams <json>
//! trees <count>
//!
//! <json model>
//! ```

use std::path::Path;

use super::{OrfError, OrfHyperparams, OrfModel};

pub const MODEL_MAGIC: &str = "prescribe-orf";
pub const MODEL_FORMAT: u32 = 1;

impl OrfModel {
    pub fn to_text(&self) -> String {
        let hp = serde_json::to_string(&self.hyperparams).expect("hyperparams serialize");
        let body = serde_json::to_string(self).expect("model serializes");
        format!(
            "{MODEL_MAGIC} {MODEL_FORMAT}\ndictionary_hash {}\nhyperparams {hp}\ntrees {}\n\n{body}\n",
            self.dictionary_hash,
            self.trees.len()
        )
    }

    /// Parses a model file. When `expected_hash` is given it must match the
    /// dictionary hash recorded in the header.
    pub fn from_text(text: &str, expected_hash: Option<&str>) -> Result<OrfModel, OrfError> {
        let bad = |m: &str| OrfError::Format(m.to_string());
        let (header, body) = text.split_once("\n\n").ok_or_else(|| bad("missing header separator"))?;
        let mut lines = header.lines();
        let first = lines.next().ok_or_else(|| bad("empty file"))?;
        let version = first
            .strip_prefix(MODEL_MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("not a model file"))?;
        if version != MODEL_FORMAT {
            return Err(OrfError::Format(format!("unsupported format version {version}")));
        }
        let mut hash = None;
        let mut hp = None;
        let mut trees = None;
        for line in lines {
            let (k, v) = line.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
            match k {
                "dictionary_hash" => hash = Some(v.to_string()),
                "hyperparams" => {
                    hp = Some(serde_json::from_str::<OrfHyperparams>(v).map_err(|e| OrfError::Format(e.to_string()))?)
                }
                "trees" => trees = Some(v.parse::<usize>().map_err(|_| bad("bad tree count"))?),
                _ => return Err(OrfError::Format(format!("unknown header key `{k}`"))),
            }
        }
        let hash = hash.ok_or_else(|| bad("missing dictionary_hash"))?;
        if let Some(exp) = expected_hash {
            if exp != hash {
                return Err(OrfError::DictionaryMismatch { expected: exp.to_string(), found: hash });
            }
        }
        let model: OrfModel = serde_json::from_str(body.trim_end()).map_err(|e| OrfError::Format(e.to_string()))?;
        if model.dictionary_hash != hash || Some(&model.hyperparams) != hp.as_ref() || Some(model.trees.len()) != trees
        {
            return Err(bad("header disagrees with body"));
        }
        model.validate()?;
        Ok(model)
    }

    /// Structural checks on a decoded model.
    fn validate(&self) -> Result<(), OrfError> {
        let bad = |m: &str| Err(OrfError::Format(m.to_string()));
        let n = self.train_x.rows();
        let p = self.train_x.cols();
        if self.train_t.len() != n || self.train_y.len() != n {
            return bad("training vectors disagree in length");
        }
        if self.trees.is_empty() {
            return bad("model has no trees");
        }
        if self.propensity.coef.len() != p || self.outcome.coef.len() != p || self.feature_names.len() != p {
            return bad("nuisance width disagrees with features");
        }
        if self.hyperparams.bootstrap_groups == 0 {
            return bad("bootstrap_groups is zero");
        }
        for tree in &self.trees {
            for node in &tree.nodes {
                match node {
                    super::Node::Split { feature, left, right, .. } => {
                        if *feature >= p
                            || *left >= tree.nodes.len()
                            || *right >= tree.nodes.len()
                            || *left == 0
                            || *right == 0
                        {
                            return bad("tree node out of range");
                        }
                    }
                    super::Node::Leaf { samples } => {
                        if samples.is_empty() || samples.iter().any(|&i| i as usize >= n) {
                            return bad("leaf sample out of range");
                        }
                    }
                }
            }
            // Children must point forward so routing terminates.
            for (at, node) in tree.nodes.iter().enumerate() {
                if let super::Node::Split { left, right, .. } = node {
                    if *left <= at || *right <= at {
                        return bad("tree is not topologically ordered");
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), OrfError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, expected_hash: Option<&str>) -> Result<OrfModel, OrfError> {
        let text = std::fs::read_to_string(path)?;
        OrfModel::from_text(&text, expected_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::orf::{fit_forest_rows, FitOptions};
    use rand::{Rng, SeedableRng};

    fn tiny() -> OrfModel {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let t: Vec<f64> = (0..200).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = rows.iter().zip(&t).map(|(r, t)| r[0] * 0.1 + 2.0 * t + rng.random::<f64>()).collect();
        let hp = OrfHyperparams {
            n_trees: 4,
            min_leaf_size: 10,
            bootstrap_groups: 2,
            subsample_ratio: 0.5,
            ..Default::default()
        };
        fit_forest_rows(
            &Matrix::from_rows(&rows, 1),
            &t,
            &y,
            "abc".into(),
            vec!["x".into()],
            &hp,
            &FitOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let back = OrfModel::from_text(&m.to_text(), Some("abc")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), m.to_text());
        let x = [0.3];
        assert_eq!(back.estimate_effect(&x).unwrap(), m.estimate_effect(&x).unwrap());
    }

    #[test]
    fn hash_mismatch_rejected() {
        let m = tiny();
        assert!(matches!(OrfModel::from_text(&m.to_text(), Some("zzz")), Err(OrfError::DictionaryMismatch { .. })));
    }

    #[test]
    fn garbage_rejected() {
        for s in ["", "hello", "prescribe-orf 2\n\n{}", "prescribe-orf 1\ntrees x\n\n{}"] {
            assert!(OrfModel::from_text(s, None).is_err());
        }
    }
}
