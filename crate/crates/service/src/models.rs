use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use easyrl_core::modelstore::{ModelArtifact, ModelMetadata};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

/// Uploaded or snapshotted models, addressed by `m{n}` ids.
#[derive(Debug, Default)]
pub struct ModelStore {
    models: RwLock<BTreeMap<String, Arc<ModelArtifact>>>,
    next_id: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelInfo {
    pub model_id: String,
    pub metadata: ModelMetadata,
}

impl ModelStore {
    pub fn insert(&self, artifact: ModelArtifact) -> ModelInfo {
        let id = format!("m{}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let info = ModelInfo {
            model_id: id.clone(),
            metadata: artifact.metadata.clone(),
        };
        self.models
            .write()
            .expect("model store lock")
            .insert(id, Arc::new(artifact));
        info
    }

    pub fn get(&self, id: &str) -> Result<Arc<ModelArtifact>, ApiError> {
        self.models
            .read()
            .expect("model store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`")))
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.models
            .read()
            .expect("model store lock")
            .iter()
            .map(|(id, a)| ModelInfo {
                model_id: id.clone(),
                metadata: a.metadata.clone(),
            })
            .collect()
    }
}
