//! Fitted-model serialization: a single JSON document with an explicit
//! schema version. Unknown optional top-level fields load with a warning;
//! a wrong version or a parse failure is an error and leaves no partial
//! state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimation::FitResult;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SavedModel {
    schema_version: u32,
    fit: FitResult,
}

pub fn save_model(path: &Path, fit: &FitResult) -> Result<()> {
    let doc = SavedModel { schema_version: SCHEMA_VERSION, fit: fit.clone() };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Parse(format!("serialize model: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load a fitted model, returning warnings for ignored unknown top-level
/// fields.
pub fn load_model(path: &Path) -> Result<(FitResult, Vec<String>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Parse(format!("{}: expected a JSON object", path.display())))?;
    let version = obj
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Parse(format!("{}: missing schema_version", path.display())))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::Unsupported(format!(
            "{}: schema version {version}, this build reads {SCHEMA_VERSION}",
            path.display()
        )));
    }
    let mut warnings = Vec::new();
    for key in obj.keys() {
        if key != "schema_version" && key != "fit" {
            warnings.push(format!("ignoring unknown field '{key}'"));
        }
    }
    let fit_value = obj
        .get("fit")
        .cloned()
        .ok_or_else(|| Error::Parse(format!("{}: missing fit", path.display())))?;
    let fit: FitResult = serde_json::from_value(fit_value)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok((fit, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::FitOptions;
    use crate::model::{ItemParams, LatentSpec, ModelSpec};

    fn dummy_fit() -> FitResult {
        let model = ModelSpec::new(
            vec![
                ItemParams::latent_class(1.0, 0.0, 0),
                ItemParams::latent_class(0.7, 0.3, 0),
            ],
            LatentSpec::discrete(vec![vec![-1.0], vec![1.0]], vec![0.4, 0.6]).unwrap(),
        );
        FitResult {
            model,
            loglik: -123.456,
            n_params: 5,
            trace: vec![-130.0, -124.0, -123.456],
            std_errors: None,
            converged: true,
            n_used: 100,
            warnings: vec![],
            options: FitOptions::default(),
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let fit = dummy_fit();
        save_model(&path, &fit).unwrap();
        let (back, warnings) = load_model(&path).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back, fit);
    }

    #[test]
    fn corrupted_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_model(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let fit = dummy_fit();
        save_model(&path, &fit).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 2");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Unsupported(_))));
    }

    #[test]
    fn unknown_top_level_fields_warn() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let fit = dummy_fit();
        save_model(&path, &fit).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        value.as_object_mut().unwrap().insert("future_field".into(), serde_json::json!(42));
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let (back, warnings) = load_model(&path).unwrap();
        assert_eq!(back, fit);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("future_field"));
    }
}
