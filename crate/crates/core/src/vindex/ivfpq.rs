//! Inverted-file index with product-quantized residuals and asymmetric
//! distance computation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sq_l2;
use crate::scalar::Scalar;

use super::kmeans::{kmeans, nearest};
use super::topk::{Neighbor, TopK};

pub const MAX_CODEBOOK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IvfPqParams {
    pub n_list: usize,
    pub m: usize,
    pub n_probe: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl IvfPqParams {
    /// `n_list = max(1, floor(sqrt(n)))`, `m = 8`, `n_probe = 32`, 25 k-means iterations.
    pub fn defaults_for(n: usize, seed: u64) -> Self {
        Self {
            n_list: ((n as f64).sqrt().floor() as usize).max(1),
            m: 8,
            n_probe: 32,
            kmeans_iters: 25,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvfPqIndex<S> {
    pub dim: usize,
    pub n_list: usize,
    pub m: usize,
    /// Centroids per sub-quantizer, `min(256, N)`.
    pub ksub: usize,
    pub n_probe: usize,
    /// `n_list × dim`
    pub coarse: Vec<S>,
    /// `m × ksub × (dim / m)`
    pub codebooks: Vec<S>,
    /// `N × m`
    pub codes: Vec<u8>,
    pub ids: Vec<u64>,
    /// Entry positions per coarse cell, ascending.
    pub lists: Vec<Vec<u32>>,
}

impl<S: Scalar> IvfPqIndex<S> {
    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Trains coarse and product quantizers on `vectors` and adds all of them.
    pub fn train(dim: usize, vectors: &[S], ids: Vec<u64>, params: IvfPqParams) -> Result<Self> {
        if dim == 0 || params.m == 0 || dim % params.m != 0 {
            return Err(Error::Config(format!(
                "dimension {dim} not divisible by m = {}",
                params.m
            )));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Config(format!(
                "{} values for {} ids of dimension {dim}",
                vectors.len(),
                ids.len()
            )));
        }
        let n = ids.len();
        if params.n_list == 0 || n < params.n_list {
            return Err(Error::Training {
                epoch: 0,
                msg: format!("{n} vectors cannot train {} coarse centroids", params.n_list),
            });
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite vector component".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let coarse = kmeans(vectors, dim, params.n_list, params.kmeans_iters, &mut rng);

        let assign: Vec<usize> = vectors
            .chunks_exact(dim)
            .map(|x| nearest(x, &coarse, dim).0)
            .collect();
        let residuals: Vec<S> = vectors
            .chunks_exact(dim)
            .zip(&assign)
            .flat_map(|(x, &c)| {
                let cen = &coarse[c * dim..(c + 1) * dim];
                x.iter().zip(cen).map(|(&a, &b)| a - b).collect::<Vec<_>>()
            })
            .collect();

        let m = params.m;
        let dsub = dim / m;
        let ksub = n.min(MAX_CODEBOOK);
        let mut codebooks = Vec::with_capacity(m * ksub * dsub);
        let mut sub = vec![S::zero(); n * dsub];
        for j in 0..m {
            for (i, r) in residuals.chunks_exact(dim).enumerate() {
                sub[i * dsub..(i + 1) * dsub].copy_from_slice(&r[j * dsub..(j + 1) * dsub]);
            }
            codebooks.extend(kmeans(&sub, dsub, ksub, params.kmeans_iters, &mut rng));
        }

        let mut index = Self {
            dim,
            n_list: params.n_list,
            m,
            ksub,
            n_probe: params.n_probe.max(1),
            coarse,
            codebooks,
            codes: Vec::with_capacity(n * m),
            ids,
            lists: vec![Vec::new(); params.n_list],
        };
        for (i, r) in residuals.chunks_exact(dim).enumerate() {
            let code = index.encode_residual(r);
            index.codes.extend_from_slice(&code);
            index.lists[assign[i]].push(i as u32);
        }
        Ok(index)
    }

    fn codebook(&self, j: usize) -> &[S] {
        let dsub = self.dsub();
        &self.codebooks[j * self.ksub * dsub..(j + 1) * self.ksub * dsub]
    }

    pub fn encode_residual(&self, r: &[S]) -> Vec<u8> {
        let dsub = self.dsub();
        (0..self.m)
            .map(|j| nearest(&r[j * dsub..(j + 1) * dsub], self.codebook(j), dsub).0 as u8)
            .collect()
    }

    /// Reconstructed residual of stored entry `pos`.
    pub fn decode_residual(&self, pos: usize) -> Vec<S> {
        let dsub = self.dsub();
        let code = &self.codes[pos * self.m..(pos + 1) * self.m];
        code.iter()
            .enumerate()
            .flat_map(|(j, &c)| {
                let cb = self.codebook(j);
                cb[c as usize * dsub..(c as usize + 1) * dsub].to_vec()
            })
            .collect()
    }

    /// Reconstructed full vector of stored entry `pos`.
    pub fn reconstruct(&self, pos: usize) -> Vec<S> {
        let cell = self
            .lists
            .iter()
            .position(|l| l.binary_search(&(pos as u32)).is_ok())
            .expect("entry belongs to a list");
        let cen = &self.coarse[cell * self.dim..(cell + 1) * self.dim];
        self.decode_residual(pos)
            .into_iter()
            .zip(cen)
            .map(|(r, &c)| r + c)
            .collect()
    }

    pub fn search(&self, query: &[S], k: usize, n_probe: usize) -> Result<Vec<Neighbor<S>>> {
        super::check_query(self.dim, query, k)?;
        if n_probe == 0 {
            return Err(Error::Query("n_probe must be at least 1".into()));
        }
        let dim = self.dim;
        let dsub = self.dsub();
        let mut cells: Vec<(S, usize)> = self
            .coarse
            .chunks_exact(dim)
            .enumerate()
            .map(|(c, cen)| (sq_l2(query, cen), c))
            .collect();
        cells.sort_by(|a, b| {
            a.0.to_f64_lossless()
                .total_cmp(&b.0.to_f64_lossless())
                .then(a.1.cmp(&b.1))
        });

        let mut top = TopK::new(k);
        let mut lut = vec![S::zero(); self.m * self.ksub];
        let mut residual = vec![S::zero(); dim];
        for &(_, c) in cells.iter().take(n_probe) {
            let list = &self.lists[c];
            if list.is_empty() {
                continue;
            }
            let cen = &self.coarse[c * dim..(c + 1) * dim];
            for ((r, &q), &x) in residual.iter_mut().zip(query).zip(cen) {
                *r = q - x;
            }
            for j in 0..self.m {
                let rq = &residual[j * dsub..(j + 1) * dsub];
                for (kk, centroid) in self.codebook(j).chunks_exact(dsub).enumerate() {
                    lut[j * self.ksub + kk] = sq_l2(rq, centroid);
                }
            }
            for &pos in list {
                let pos = pos as usize;
                let code = &self.codes[pos * self.m..(pos + 1) * self.m];
                let d = code
                    .iter()
                    .enumerate()
                    .fold(S::zero(), |acc, (j, &cc)| acc + lut[j * self.ksub + cc as usize]);
                top.push(self.ids[pos], d);
            }
        }
        Ok(top.into_sorted())
    }
}
