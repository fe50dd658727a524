//! Dense retrieval: a flat vector store scanned by cosine similarity.

use super::MemoryError;

/// Cosine similarity computed in f64. A zero-norm operand yields 0.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Append-only store of row vectors, one per memory entry, all one dimension.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: Option<usize>,
    rows: Vec<Vec<f32>>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f32>] {
        &self.rows
    }

    pub fn add_batch(&mut self, vectors: Vec<Vec<f32>>) -> Result<(), MemoryError> {
        for v in vectors {
            match self.dim {
                None => self.dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(MemoryError::SchemaViolation(format!(
                        "vector dimension {} does not match index dimension {d}",
                        v.len()
                    )))
                }
                Some(_) => {}
            }
            if v.is_empty() {
                return Err(MemoryError::SchemaViolation(
                    "empty embedding vector".into(),
                ));
            }
            self.rows.push(v);
        }
        Ok(())
    }

    /// The `k` most similar rows, best first; ties keep insertion order.
    /// Unlike lexical retrieval there is no score floor: the nearest
    /// neighbors are returned however weak the similarity.
    pub fn top_k(&self, query: &[f32], k: usize) -> Vec<(usize, f64)> {
        let mut ranked: Vec<(usize, f64)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| (i, cosine_similarity(query, row)))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        ranked.truncate(k);
        ranked
    }
}
