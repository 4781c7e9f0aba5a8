use crate::error::{Error, Result};
use crate::linalg::sq_l2;
use crate::scalar::Scalar;

use super::topk::{Neighbor, TopK};

/// Exact brute-force index over squared Euclidean distance.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex<S> {
    pub dim: usize,
    pub vectors: Vec<S>,
    pub ids: Vec<u64>,
}

impl<S: Scalar> FlatIndex<S> {
    /// `vectors` is row-major `ids.len() × dim`.
    pub fn build(dim: usize, vectors: Vec<S>, ids: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Config(format!(
                "{} values for {} ids of dimension {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite vector component".into()));
        }
        Ok(Self { dim, vectors, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn search(&self, query: &[S], k: usize) -> Result<Vec<Neighbor<S>>> {
        super::check_query(self.dim, query, k)?;
        let mut top = TopK::new(k);
        for (x, &id) in self.vectors.chunks_exact(self.dim).zip(&self.ids) {
            top.push(id, sq_l2(query, x));
        }
        Ok(top.into_sorted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_index_returns_nothing() {
        let idx = FlatIndex::<f32>::build(4, vec![], vec![]).unwrap();
        assert!(idx.search(&[0.0; 4], 3).unwrap().is_empty());
    }

    #[test]
    fn singleton_always_returned() {
        let idx = FlatIndex::build(2, vec![1.0f32, 2.0], vec![42]).unwrap();
        let hits = idx.search(&[-5.0, 9.0], 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].id, 42);
    }

    #[test]
    fn self_match_first_at_zero() {
        let idx = FlatIndex::build(2, vec![0.0f32, 0.0, 1.0, 1.0, 3.0, 1.0], vec![7, 8, 9]).unwrap();
        let hits = idx.search(&[1.0, 1.0], 2).unwrap();
        assert_eq!(hits[0].id, 8);
        assert_eq!(hits[0].distance, 0.0);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let idx = FlatIndex::build(1, vec![1.0f64, -1.0, 1.0], vec![5, 3, 4]).unwrap();
        let ids: Vec<u64> = idx.search(&[0.0], 3).unwrap().iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![3, 4, 5]);
    }

    #[test]
    fn length_mismatch_and_bad_query() {
        assert!(FlatIndex::build(2, vec![1.0f32; 3], vec![0, 1]).is_err());
        let idx = FlatIndex::build(2, vec![1.0f32; 2], vec![0]).unwrap();
        assert!(matches!(idx.search(&[1.0], 1), Err(Error::Query(_))));
        assert!(matches!(idx.search(&[1.0, 2.0], 0), Err(Error::Query(_))));
    }
}
