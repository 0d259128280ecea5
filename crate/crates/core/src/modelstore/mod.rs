//! EZRL model artifacts and results CSV files.
//!
//! Layout of an artifact file, all integers little-endian:
//!
//! ```text
//! "EZRL" | u32 format version | u64 metadata length | metadata JSON | weight blobs | u32 file CRC
//! ```
//!
//! Blobs follow in the order the metadata lists them. `f64` sections hold
//! raw little-endian doubles; `bytes` sections hold opaque plugin state.
//! The metadata carries a CRC-32 of the weight bytes; the footer is a CRC-32
//! of everything before it, so damaged metadata is caught as well.

mod results;

pub use results::{parse_results, results_csv, write_results, ResultRow, RESULTS_HEADER};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    builtin_descriptor, check_compatible, make_agent, Agent, AgentError, Hyperparameters,
    SectionData, WeightSection,
};
use crate::envkit::EnvDescriptor;

pub const MAGIC: &[u8; 4] = b"EZRL";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE_LEN: usize = 4 + 4 + 8;
const FOOTER_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an EZRL model: {0}")]
    Format(String),
    #[error("corrupted model file: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionDtype {
    F64,
    Bytes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SectionMeta {
    pub name: String,
    pub dtype: SectionDtype,
    pub shape: Vec<usize>,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelMetadata {
    pub agent_id: String,
    pub env_id: String,
    pub env_descriptor: EnvDescriptor,
    pub hyperparameters: Hyperparameters,
    pub episodes_completed: u64,
    pub created_at: String,
    /// CRC-32 over every weight byte in file order.
    pub crc32: u32,
    pub sections: Vec<SectionMeta>,
}

/// A decoded artifact: metadata plus weight sections in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub metadata: ModelMetadata,
    pub sections: Vec<WeightSection>,
}

impl ModelArtifact {
    /// Assembles an artifact, filling in section table and checksum.
    pub fn new(
        agent_id: &str,
        env: &EnvDescriptor,
        hyperparameters: &Hyperparameters,
        episodes_completed: u64,
        created_at: String,
        sections: Vec<WeightSection>,
    ) -> Self {
        let mut crc = crc32fast::Hasher::new();
        let mut table = Vec::with_capacity(sections.len());
        for s in &sections {
            let blob = section_bytes(s);
            crc.update(&blob);
            let (dtype, shape) = match &s.data {
                SectionData::F64 { shape, .. } => (SectionDtype::F64, shape.clone()),
                SectionData::Bytes(b) => (SectionDtype::Bytes, vec![b.len()]),
            };
            table.push(SectionMeta {
                name: s.name.clone(),
                dtype,
                shape,
                byte_length: blob.len() as u64,
            });
        }
        Self {
            metadata: ModelMetadata {
                agent_id: agent_id.to_string(),
                env_id: env.id.clone(),
                env_descriptor: env.clone(),
                hyperparameters: hyperparameters.clone(),
                episodes_completed,
                created_at,
                crc32: crc.finalize(),
                sections: table,
            },
            sections,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        let mut out = Vec::with_capacity(PREAMBLE_LEN + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for s in &self.sections {
            out.extend_from_slice(&section_bytes(s));
        }
        let footer = crc32fast::hash(&out);
        out.extend_from_slice(&footer.to_le_bytes());
        out
    }

    /// Decodes and verifies an artifact. Nothing is returned unless the
    /// checksum and every declared length agree.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ModelError::Format("missing EZRL magic".into()));
        }
        if bytes.len() < PREAMBLE_LEN + FOOTER_LEN {
            return Err(ModelError::Corrupt("file ends inside the header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (bytes, footer) = bytes.split_at(bytes.len() - FOOTER_LEN);
        let stored = u32::from_le_bytes(footer.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(bytes);
        if stored != actual {
            return Err(ModelError::Corrupt(format!(
                "file checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let meta_end = usize::try_from(meta_len)
            .ok()
            .and_then(|l| PREAMBLE_LEN.checked_add(l))
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| ModelError::Corrupt("metadata length exceeds file size".into()))?;
        let metadata: ModelMetadata = serde_json::from_slice(&bytes[PREAMBLE_LEN..meta_end])
            .map_err(|e| ModelError::Corrupt(format!("unreadable metadata: {e}")))?;

        let mut offset = meta_end;
        let mut crc = crc32fast::Hasher::new();
        let mut sections = Vec::with_capacity(metadata.sections.len());
        for meta in &metadata.sections {
            let len = usize::try_from(meta.byte_length).map_err(|_| {
                ModelError::Corrupt(format!("section `{}` is too large", meta.name))
            })?;
            let end = offset
                .checked_add(len)
                .filter(|e| *e <= bytes.len())
                .ok_or_else(|| {
                    ModelError::Corrupt(format!("file truncated inside section `{}`", meta.name))
                })?;
            let blob = &bytes[offset..end];
            crc.update(blob);
            sections.push(decode_section(meta, blob)?);
            offset = end;
        }
        if offset != bytes.len() {
            return Err(ModelError::Corrupt(format!(
                "{} trailing bytes after the last section",
                bytes.len() - offset
            )));
        }
        let actual = crc.finalize();
        if actual != metadata.crc32 {
            return Err(ModelError::Corrupt(format!(
                "checksum mismatch: stored {:08x}, computed {actual:08x}",
                metadata.crc32
            )));
        }
        Ok(Self { metadata, sections })
    }

    /// Checks that this artifact can drive `env`: same observation space and
    /// action count as the environment it was trained on.
    pub fn check_env(&self, env: &EnvDescriptor) -> Result<(), ModelError> {
        let trained = &self.metadata.env_descriptor;
        if trained.obs_kind != env.obs_kind || trained.action_count != env.action_count {
            return Err(ModelError::Incompatible(format!(
                "model for `{}` ({:?}, {} actions) cannot run on `{}` ({:?}, {} actions)",
                trained.id,
                trained.obs_kind,
                trained.action_count,
                env.id,
                env.obs_kind,
                env.action_count
            )));
        }
        Ok(())
    }

    /// Rebuilds a built-in agent with the stored weights.
    pub fn instantiate(&self, env: &EnvDescriptor) -> Result<Box<dyn Agent>, ModelError> {
        self.check_env(env)?;
        let id = &self.metadata.agent_id;
        let descriptor =
            builtin_descriptor(id).ok_or_else(|| AgentError::UnknownAgent(id.clone()))?;
        check_compatible(&descriptor, env)?;
        let mut agent = make_agent(id, env, &self.metadata.hyperparameters)?;
        agent.load(&self.sections)?;
        Ok(agent)
    }
}

fn section_bytes(s: &WeightSection) -> Vec<u8> {
    match &s.data {
        SectionData::F64 { values, .. } => values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        SectionData::Bytes(b) => b.clone(),
    }
}

fn decode_section(meta: &SectionMeta, blob: &[u8]) -> Result<WeightSection, ModelError> {
    match meta.dtype {
        SectionDtype::F64 => {
            let count: usize = meta.shape.iter().product();
            if count.checked_mul(8) != Some(blob.len()) {
                return Err(ModelError::Corrupt(format!(
                    "section `{}` declares shape {:?} but holds {} bytes",
                    meta.name,
                    meta.shape,
                    blob.len()
                )));
            }
            let values = blob
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(WeightSection::f64(
                meta.name.clone(),
                meta.shape.clone(),
                values,
            ))
        }
        SectionDtype::Bytes => Ok(WeightSection::bytes(meta.name.clone(), blob.to_vec())),
    }
}

/// Writes atomically: a temporary file in the target directory is renamed
/// over `path` once fully written.
pub fn save_model(path: &Path, artifact: &ModelArtifact) -> Result<(), ModelError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&artifact.to_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact, ModelError> {
    ModelArtifact::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envkit::make_builtin;

    fn frozen_lake() -> EnvDescriptor {
        make_builtin("FrozenLake-v0").unwrap().descriptor().clone()
    }

    fn sample() -> ModelArtifact {
        let env = frozen_lake();
        let hp = Hyperparameters::defaults_for("qlearning");
        let mut agent = make_agent("qlearning", &env, &hp).unwrap();
        ModelArtifact::new(
            "qlearning",
            &env,
            &hp,
            3,
            "2026-01-01T00:00:00Z".into(),
            agent.save().unwrap(),
        )
    }

    #[test]
    fn qtable_section_length() {
        let a = sample();
        let q = a
            .metadata
            .sections
            .iter()
            .find(|s| s.name == "q_table")
            .unwrap();
        assert_eq!(q.byte_length, 16 * 4 * 8);
        assert_eq!(q.shape, vec![16, 4]);
    }

    #[test]
    fn bytes_round_trip() {
        let a = sample();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"EZRL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for len in 0..bytes.len() {
            assert!(
                ModelArtifact::from_bytes(&bytes[..len]).is_err(),
                "accepted {len} bytes"
            );
        }
    }

    #[test]
    fn flipped_weight_byte_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let last = bytes.len() - 20;
        bytes[last] ^= 0x01;
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(ModelError::Corrupt(_))
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(ModelError::Format(_))
        ));
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert!(matches!(
            ModelArtifact::from_bytes(&bytes),
            Err(ModelError::Format(_))
        ));
    }

    #[test]
    fn action_count_mismatch_is_incompatible() {
        let mut env = frozen_lake();
        env.action_count = 2;
        env.id = "Other".into();
        assert!(matches!(
            sample().instantiate(&env),
            Err(ModelError::Incompatible(_))
        ));
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ezrl");
        let a = sample();
        save_model(&path, &a).unwrap();
        assert_eq!(fs::read(&path).unwrap(), a.to_bytes());
        assert_eq!(load_model(&path).unwrap(), a);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let a = sample();
        let err = save_model(Path::new("/nonexistent-dir/x/m.ezrl"), &a).unwrap_err();
        assert!(matches!(err, ModelError::Io(_)));
    }
}
