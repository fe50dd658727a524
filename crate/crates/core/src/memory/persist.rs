//! On-disk format for a RAG system's memory: a schema-tagged manifest, the
//! entries as JSONL, and the index itself (JSON postings for BM25, a packed
//! little-endian matrix for vectors).

use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Granularity, IndexBackend, MemoryEntry, MemoryError, RagSystem, RetrievalConfig, VectorIndex,
};
use crate::gateway::Gateway;

pub const SCHEMA_TAG: &str = "feedbench.index/v1";

const META_FILE: &str = "meta.json";
const ENTRIES_FILE: &str = "entries.jsonl";
const POSTINGS_FILE: &str = "postings.json";
const VECTORS_FILE: &str = "vectors.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Lexical,
    Semantic,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexManifest {
    schema: String,
    system: String,
    granularity: Granularity,
    backend: BackendKind,
    entry_count: usize,
    config: RetrievalConfig,
}

fn violation(msg: impl Into<String>) -> MemoryError {
    MemoryError::SchemaViolation(msg.into())
}

pub(super) fn save(system: &RagSystem, dir: &Path) -> Result<(), MemoryError> {
    std::fs::create_dir_all(dir)?;
    let backend = match &system.backend {
        IndexBackend::Lexical(_) => BackendKind::Lexical,
        IndexBackend::Semantic(_) => BackendKind::Semantic,
    };
    let manifest = IndexManifest {
        schema: SCHEMA_TAG.to_string(),
        system: system.name.clone(),
        granularity: system.granularity,
        backend,
        entry_count: system.entries.len(),
        config: system.config,
    };
    let meta = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(META_FILE), meta)?;

    let mut entries = String::new();
    for entry in &system.entries {
        entries.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        entries.push('\n');
    }
    std::fs::write(dir.join(ENTRIES_FILE), entries)?;

    match &system.backend {
        IndexBackend::Lexical(index) => {
            let json = serde_json::to_string(index).expect("postings serialize");
            std::fs::write(dir.join(POSTINGS_FILE), json)?;
        }
        IndexBackend::Semantic(index) => {
            let mut file = std::fs::File::create(dir.join(VECTORS_FILE))?;
            write_vectors(&mut file, index)?;
        }
    }
    Ok(())
}

pub(super) fn load(dir: &Path, gateway: Arc<Gateway>) -> Result<RagSystem, MemoryError> {
    let meta_path = dir.join(META_FILE);
    let meta = std::fs::read_to_string(&meta_path)?;
    let manifest: IndexManifest = serde_json::from_str(&meta)
        .map_err(|e| violation(format!("{}: {e}", meta_path.display())))?;
    if manifest.schema != SCHEMA_TAG {
        return Err(violation(format!(
            "{} declares schema {:?}, expected {SCHEMA_TAG:?}",
            meta_path.display(),
            manifest.schema
        )));
    }

    let entries_path = dir.join(ENTRIES_FILE);
    let file = std::fs::File::open(&entries_path)?;
    let mut entries: Vec<MemoryEntry> = Vec::with_capacity(manifest.entry_count);
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| violation(format!("{}:{}: {e}", entries_path.display(), i + 1)))?;
        entries.push(entry);
    }
    if entries.len() != manifest.entry_count {
        return Err(violation(format!(
            "manifest declares {} entries but {} were stored",
            manifest.entry_count,
            entries.len()
        )));
    }

    let mut system = match manifest.backend {
        BackendKind::Lexical => RagSystem::bm25(gateway, manifest.granularity, manifest.config),
        BackendKind::Semantic => {
            RagSystem::embedding(gateway, manifest.granularity, manifest.config)
        }
    };
    match &mut system.backend {
        IndexBackend::Lexical(index) => {
            let json = std::fs::read_to_string(dir.join(POSTINGS_FILE))?;
            *index = serde_json::from_str(&json).map_err(|e| violation(e.to_string()))?;
            if index.len() != entries.len() {
                return Err(violation("postings and entries disagree on document count"));
            }
        }
        IndexBackend::Semantic(index) => {
            let mut file = std::fs::File::open(dir.join(VECTORS_FILE))?;
            *index = read_vectors(&mut file)?;
            if index.len() != entries.len() {
                return Err(violation("vector rows and entries disagree on count"));
            }
        }
    }
    system.entries = entries;
    Ok(system)
}

/// Layout: u32 dimension, then row-major f32 values, all little-endian.
fn write_vectors(out: &mut impl Write, index: &VectorIndex) -> Result<(), MemoryError> {
    let dim = index.dim().unwrap_or(0);
    let dim_u32 = u32::try_from(dim).map_err(|_| violation("vector dimension exceeds u32"))?;
    out.write_all(&dim_u32.to_le_bytes())?;
    for row in index.rows() {
        for &v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_vectors(input: &mut impl Read) -> Result<VectorIndex, MemoryError> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() < 4 {
        return Err(violation("vector file too short for its header"));
    }
    let dim = u32::from_le_bytes(raw[..4].try_into().expect("4 bytes")) as usize;
    let body = &raw[4..];
    let mut index = VectorIndex::new();
    if dim == 0 {
        if !body.is_empty() {
            return Err(violation("zero-dimension vector file carries data"));
        }
        return Ok(index);
    }
    let row_bytes = dim * 4;
    if body.len() % row_bytes != 0 {
        return Err(violation(format!(
            "vector file body of {} bytes is not a whole number of {dim}-float rows",
            body.len()
        )));
    }
    let mut rows = Vec::with_capacity(body.len() / row_bytes);
    for row in body.chunks_exact(row_bytes) {
        rows.push(
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    index.add_batch(rows)?;
    Ok(index)
}
