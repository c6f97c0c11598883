//! Position-aware graph attention embedding over the fully connected item
//! graph. Every node carries its item features plus a one-hot encoding of the
//! item's initial display position; attention runs over all ordered pairs
//! including self-edges.

use crate::autodiff::{Tape, Var};
use crate::data::RankedRequest;
use crate::error::{CrumError, Result};
use crate::nn::{xavier_uniform, ParamSet, TapeParams};
use crate::perm::Permutation;
use crate::scalar::{lit, Scalar};
use ndarray::Array2;
use rand_chacha::ChaCha20Rng;

/// Slope of the leaky rectifier applied to raw attention logits.
pub const ATTENTION_LEAK: f64 = 0.2;

/// One-hot encoder for 1-based display positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionEncoding {
    pub n_max: usize,
}

impl PositionEncoding {
    pub fn new(n_max: usize) -> Self {
        assert!(n_max > 0);
        PositionEncoding { n_max }
    }

    /// One-hot vector for a position in `1..=n_max`.
    pub fn encode<S: Scalar>(&self, position: usize) -> Result<Vec<S>> {
        if position == 0 || position > self.n_max {
            return Err(CrumError::Domain(format!(
                "position {position} outside 1..={}",
                self.n_max
            )));
        }
        let mut row = vec![S::zero(); self.n_max];
        row[position - 1] = S::one();
        Ok(row)
    }

    /// Row-per-item matrix of one-hots for each item's position under `perm`.
    pub fn matrix<S: Scalar>(&self, perm: &Permutation) -> Result<Array2<S>> {
        let mut m = Array2::zeros((perm.len(), self.n_max));
        for i in 0..perm.len() {
            let p = perm.position_of(i);
            if p > self.n_max {
                return Err(CrumError::Domain(format!(
                    "position {p} outside 1..={}",
                    self.n_max
                )));
            }
            m[[i, p - 1]] = S::one();
        }
        Ok(m)
    }
}

/// Per-item embedding produced by the attention stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEmbedding<S: Scalar> {
    /// One row per item, width = the stack's output width.
    pub vectors: Array2<S>,
}

impl<S: Scalar> GraphEmbedding<S> {
    pub fn new(vectors: Array2<S>) -> Result<Self> {
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(CrumError::Numeric(
                "graph embedding has non-finite entries".into(),
            ));
        }
        Ok(GraphEmbedding { vectors })
    }

    pub fn item_count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Architecture of the attention stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gat {
    /// Propagation steps T.
    pub layers: usize,
    /// Attention heads L per layer.
    pub heads: usize,
    /// Total per-layer output width (heads concatenated).
    pub width: usize,
    /// One-hot position dimension.
    pub n_max: usize,
    /// Raw item feature width (the layer-0 input).
    pub feature_dim: usize,
    pub prefix: String,
}

/// Tape handles produced by one forward pass.
pub struct GatForward {
    /// Final `(n, width)` embedding (or the raw features when `layers = 0`).
    pub embedding: Var,
    /// `attention[t][l]` is the `(n, n)` row-stochastic attention matrix of
    /// head `l` in layer `t`.
    pub attention: Vec<Vec<Var>>,
}

impl Gat {
    pub fn new(
        prefix: &str,
        layers: usize,
        heads: usize,
        width: usize,
        n_max: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        if heads == 0 || width == 0 || n_max == 0 || feature_dim == 0 {
            return Err(CrumError::Config(
                "attention stack dimensions must be positive".into(),
            ));
        }
        if width % heads != 0 {
            return Err(CrumError::Config(format!(
                "head count {heads} must divide the layer width {width}"
            )));
        }
        Ok(Gat {
            layers,
            heads,
            width,
            n_max,
            feature_dim,
            prefix: prefix.to_string(),
        })
    }

    /// Width of each head's slice of a layer output.
    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    /// Input width of layer `t`: raw features for the first layer, the
    /// previous layer's output afterwards; both get the position one-hot
    /// appended.
    fn layer_input_width(&self, layer: usize) -> usize {
        let node = if layer == 0 { self.feature_dim } else { self.width };
        node + self.n_max
    }

    /// Output width of the whole stack.
    pub fn output_width(&self) -> usize {
        if self.layers == 0 {
            self.feature_dim
        } else {
            self.width
        }
    }

    /// Fresh Xavier-initialized parameters for every layer and head.
    pub fn init<S: Scalar>(&self, rng: &mut ChaCha20Rng) -> ParamSet<S> {
        let mut params = ParamSet::new();
        let hw = self.head_width();
        for t in 0..self.layers {
            let fan_in = self.layer_input_width(t);
            for l in 0..self.heads {
                params.insert(
                    format!("{}.t{t}.h{l}.w", self.prefix),
                    xavier_uniform(hw, fan_in, rng),
                );
                params.insert(
                    format!("{}.t{t}.h{l}.a_src", self.prefix),
                    xavier_uniform(1, hw, rng),
                );
                params.insert(
                    format!("{}.t{t}.h{l}.a_dst", self.prefix),
                    xavier_uniform(1, hw, rng),
                );
            }
        }
        params
    }

    /// Forward pass for one request on the tape.
    ///
    /// `features` is the `(n, feature_dim)` item matrix; `initial_positions`
    /// supplies the one-hot attributes, which stay fixed across layers. The
    /// pairwise logit decomposes as `e_ij = leaky(a_src·z_i + a_dst·z_j)`,
    /// the one-layer feed-forward on the concatenated pair; rows of the
    /// exp-softmax then give each node's attention over all nodes including
    /// itself.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &TapeParams,
        features: Var,
        initial_positions: &Permutation,
    ) -> Result<GatForward> {
        let n = tape.value(features).nrows();
        if n != initial_positions.len() {
            return Err(CrumError::Config(format!(
                "{n} feature rows for {} positions",
                initial_positions.len()
            )));
        }
        if tape.value(features).ncols() != self.feature_dim {
            return Err(CrumError::Config(format!(
                "feature width {} does not match the configured {}",
                tape.value(features).ncols(),
                self.feature_dim
            )));
        }

        let pos_matrix = PositionEncoding::new(self.n_max).matrix::<S>(initial_positions)?;
        let positions = tape.leaf(pos_matrix);
        let ones_row = tape.leaf(Array2::ones((1, n)));
        let ones_col = tape.leaf(Array2::ones((n, 1)));

        let mut h = features;
        let mut attention = Vec::with_capacity(self.layers);
        for t in 0..self.layers {
            let input = tape.concat_cols(&[h, positions]);
            let mut head_outputs = Vec::with_capacity(self.heads);
            let mut head_alphas = Vec::with_capacity(self.heads);
            for l in 0..self.heads {
                let w = params.var(&format!("{}.t{t}.h{l}.w", self.prefix));
                let a_src = params.var(&format!("{}.t{t}.h{l}.a_src", self.prefix));
                let a_dst = params.var(&format!("{}.t{t}.h{l}.a_dst", self.prefix));

                let wt = tape.transpose(w);
                let z = tape.matmul(input, wt);

                let a_src_t = tape.transpose(a_src);
                let a_dst_t = tape.transpose(a_dst);
                let s_src = tape.matmul(z, a_src_t);
                let s_dst = tape.matmul(z, a_dst_t);

                // e[i][j] = s_src[i] + s_dst[j], built by rank-1 broadcasts.
                let src_grid = tape.matmul(s_src, ones_row);
                let s_dst_row = tape.transpose(s_dst);
                let dst_grid = tape.matmul(ones_col, s_dst_row);
                let raw = tape.add(src_grid, dst_grid);
                let logits = tape.leaky_relu(raw, lit(ATTENTION_LEAK));
                let alpha = tape.softmax_rows(logits);

                let mixed = tape.matmul(alpha, z);
                let squashed = tape.sigmoid(mixed);
                head_outputs.push(squashed);
                head_alphas.push(alpha);
            }
            h = tape.concat_cols(&head_outputs);
            attention.push(head_alphas);
        }
        Ok(GatForward {
            embedding: h,
            attention,
        })
    }
}

/// Runs the stack outside any training tape and returns the embedding values.
pub fn embed_request<S: Scalar>(
    gat: &Gat,
    params: &ParamSet<S>,
    request: &RankedRequest<S>,
) -> Result<GraphEmbedding<S>> {
    let n = request.len();
    if n == 0 {
        return Err(CrumError::Domain("cannot embed an empty request".into()));
    }
    let mut features = Array2::zeros((n, gat.feature_dim));
    for (i, item) in request.items.iter().enumerate() {
        if item.features.len() != gat.feature_dim {
            return Err(CrumError::Config(format!(
                "item feature width {} does not match the configured {}",
                item.features.len(),
                gat.feature_dim
            )));
        }
        for (j, &x) in item.features.iter().enumerate() {
            features[[i, j]] = x;
        }
    }
    let mut tape = Tape::new();
    let handles = params.register(&mut tape);
    let x = tape.leaf(features);
    let fwd = gat.forward(&mut tape, &handles, x, &request.initial_positions)?;
    GraphEmbedding::new(tape.value(fwd.embedding).clone())
}
