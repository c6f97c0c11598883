//! Neural-network building blocks: parameter sets, Xavier initialization,
//! multi-layer perceptrons on the autodiff tape, and the Adam optimizer.

use crate::autodiff::{Tape, Var};
use crate::error::{CrumError, Result};
use crate::scalar::{lit, Scalar};
use crate::store::{ParameterStore, StoreMeta};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

/// Ordered collection of named parameter tensors.
///
/// Order fixes the registration order on tapes and the flattened layout used
/// by gradient checks, so it must be deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<S: Scalar> {
    entries: Vec<(String, Array2<S>)>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Adds a tensor under a unique name.
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<S>) {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| n != &name),
            "duplicate parameter name '{name}'"
        );
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> &Array2<S> {
        &self
            .entries
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
            .1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<S> {
        &mut self
            .entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("missing parameter '{name}'"))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<S>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    /// Merges another set under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet<S>) {
        for (name, value) in other.entries {
            self.insert(format!("{prefix}.{name}"), value);
        }
    }

    /// Flattens all tensors into one coordinate vector (registration order,
    /// row-major within each tensor).
    pub fn flatten(&self) -> Vec<S> {
        self.entries
            .iter()
            .flat_map(|(_, v)| v.iter().cloned())
            .collect()
    }

    /// Writes a coordinate vector produced by [`ParamSet::flatten`] back.
    pub fn unflatten(&mut self, flat: &[S]) {
        let mut offset = 0;
        for (_, v) in &mut self.entries {
            for x in v.iter_mut() {
                *x = flat[offset];
                offset += 1;
            }
        }
        assert_eq!(offset, flat.len(), "flattened length mismatch");
    }

    /// Registers every tensor as a tape leaf.
    pub fn register(&self, tape: &mut Tape<S>) -> TapeParams {
        let mut vars = BTreeMap::new();
        for (name, value) in &self.entries {
            vars.insert(name.clone(), tape.leaf(value.clone()));
        }
        TapeParams { vars }
    }

    /// Copies the tensors into a checkpoint store.
    pub fn to_store(&self, meta: StoreMeta) -> Result<ParameterStore<S>> {
        let mut store = ParameterStore::new(meta);
        for (name, value) in &self.entries {
            store.insert(name, value)?;
        }
        Ok(store)
    }

    /// Rebuilds a set from a checkpoint store, keeping the store's order.
    pub fn from_store(store: &ParameterStore<S>) -> Result<Self> {
        let mut set = ParamSet::new();
        for name in store.names() {
            set.insert(name, store.get(name)?);
        }
        Ok(set)
    }
}

/// Tape-registered parameter handles, keyed by parameter name.
pub struct TapeParams {
    vars: BTreeMap<String, Var>,
}

impl TapeParams {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not registered on this tape"))
    }

    /// Collects gradients for every registered parameter; parameters the loss
    /// never touched get zero gradients.
    pub fn collect_grads<S: Scalar>(
        &self,
        tape: &Tape<S>,
        grads: &mut crate::autodiff::Gradients<S>,
    ) -> BTreeMap<String, Array2<S>> {
        self.vars
            .iter()
            .map(|(name, &var)| {
                let g = grads
                    .take(var)
                    .unwrap_or_else(|| Array2::zeros(tape.value(var).dim()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Xavier (Glorot) uniform initialization: `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))` for a `(fan_out, fan_in)` tensor.
pub fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Array2<S> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| lit(rng.random_range(-limit..limit)))
}

/// Hidden-layer activation of an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Output squashing of an MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    /// Raw affine output (score heads).
    Linear,
    /// Logistic output is applied by the caller on the logits; the MLP
    /// itself still emits logits so losses can stay in the stable
    /// softplus form.
    Logits,
}

/// Multi-layer perceptron `input -> hidden... -> 1` on the tape.
///
/// Weight `w{i}` has shape `(fan_out, fan_in)`; forward computes
/// `x @ w{i}^T + b{i}` per layer with the hidden activation between layers
/// and no squashing after the last (see [`Output`]).
#[derive(Debug, Clone)]
pub struct Mlp {
    /// Layer widths from input to output, e.g. `[148, 1024, 512, 128, 64, 1]`.
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub prefix: String,
}

impl Mlp {
    /// Builds the architecture description; `dims` must chain from the input
    /// width to the output width.
    pub fn new(prefix: &str, dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CrumError::Config(format!(
                "MLP '{prefix}' needs at least input and output widths, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(CrumError::Config(format!(
                "MLP '{prefix}' has a zero-width layer: {dims:?}"
            )));
        }
        Ok(Mlp {
            dims,
            activation,
            prefix: prefix.to_string(),
        })
    }

    /// Fresh Xavier-initialized parameters (biases zero).
    pub fn init<S: Scalar>(&self, rng: &mut ChaCha20Rng) -> ParamSet<S> {
        let mut params = ParamSet::new();
        for layer in 0..self.dims.len() - 1 {
            let (fan_in, fan_out) = (self.dims[layer], self.dims[layer + 1]);
            params.insert(
                format!("{}.w{layer}", self.prefix),
                xavier_uniform(fan_out, fan_in, rng),
            );
            params.insert(
                format!("{}.b{layer}", self.prefix),
                Array2::zeros((1, fan_out)),
            );
        }
        params
    }

    /// Forward pass on the tape; `x` is `(batch, input_dim)`, the result is
    /// `(batch, output_dim)` pre-squash.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, params: &TapeParams, x: Var) -> Var {
        let mut h = x;
        for layer in 0..self.dims.len() - 1 {
            let w = params.var(&format!("{}.w{layer}", self.prefix));
            let b = params.var(&format!("{}.b{layer}", self.prefix));
            let wt = tape.transpose(w);
            let z = tape.matmul(h, wt);
            h = tape.add_row(z, b);
            if layer + 1 < self.dims.len() - 1 {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }
}

/// Adam optimizer with per-tensor first and second moment state.
pub struct Adam<S: Scalar> {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: BTreeMap<String, Array2<S>>,
    v: BTreeMap<String, Array2<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update with the given learning rate.
    pub fn step(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &BTreeMap<String, Array2<S>>,
        learning_rate: f64,
    ) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (lit::<S>(self.beta1), lit::<S>(self.beta2));
        let one_minus_b1 = lit::<S>(1.0 - self.beta1);
        let one_minus_b2 = lit::<S>(1.0 - self.beta2);
        let eps = lit::<S>(self.epsilon);
        let scale = lit::<S>(learning_rate / bias1);
        let inv_sqrt_bias2 = lit::<S>(1.0 / bias2.sqrt());

        for (name, grad) in grads {
            let value = params.get_mut(name);
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.dim()));
            ndarray::Zip::from(value).and(m).and(v).and(grad).for_each(
                |value, m, v, &g| {
                    *m = b1 * *m + one_minus_b1 * g;
                    *v = b2 * *v + one_minus_b2 * g * g;
                    let v_hat_sqrt = (*v).sqrt() * inv_sqrt_bias2;
                    *value -= scale * *m / (v_hat_sqrt + eps);
                },
            );
        }
    }
}

impl<S: Scalar> Default for Adam<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;

    #[test]
    fn xavier_respects_the_fan_limit_and_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let w: Array2<f64> = xavier_uniform(64, 32, &mut rng);
        let limit = (6.0f64 / 96.0).sqrt();
        assert!(w.iter().all(|&x| x.abs() < limit));
        let mut rng2 = ChaCha20Rng::seed_from_u64(3);
        let w2: Array2<f64> = xavier_uniform(64, 32, &mut rng2);
        assert_eq!(w, w2);
    }

    #[test]
    fn mlp_forward_has_the_contracted_shape() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mlp = Mlp::new("mlp", vec![6, 8, 4, 1], Activation::Relu).unwrap();
        let params: ParamSet<f64> = mlp.init(&mut rng);
        // Per layer: weight + bias.
        assert_eq!(params.len(), 6);

        let mut tape = Tape::new();
        let handles = params.register(&mut tape);
        let x = tape.leaf(Array2::from_elem((5, 6), 0.3));
        let out = mlp.forward(&mut tape, &handles, x);
        assert_eq!(tape.value(out).dim(), (5, 1));
    }

    #[test]
    fn zero_weight_mlp_outputs_its_bias() {
        let mlp = Mlp::new("m", vec![3, 2, 1], Activation::Relu).unwrap();
        let mut params: ParamSet<f64> = ParamSet::new();
        params.insert("m.w0", Array2::zeros((2, 3)));
        params.insert("m.b0", Array2::zeros((1, 2)));
        params.insert("m.w1", Array2::zeros((1, 2)));
        params.insert("m.b1", arr2(&[[0.75]]));
        let mut tape = Tape::new();
        let handles = params.register(&mut tape);
        let x = tape.leaf(arr2(&[[1.0, -2.0, 3.0], [4.0, 5.0, -6.0]]));
        let out = mlp.forward(&mut tape, &handles, x);
        assert_eq!(tape.value(out), &arr2(&[[0.75], [0.75]]));
    }

    #[test]
    fn flatten_unflatten_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mlp = Mlp::new("m", vec![4, 3, 1], Activation::Tanh).unwrap();
        let mut params: ParamSet<f64> = mlp.init(&mut rng);
        let flat = params.flatten();
        let mut doubled = flat.clone();
        for x in &mut doubled {
            *x *= 2.0;
        }
        params.unflatten(&doubled);
        assert_eq!(params.flatten(), doubled);
        params.unflatten(&flat);
        assert_eq!(params.flatten(), flat);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // With g = 1 on the first step, m-hat = 1 and v-hat = 1, so the update
        // is lr / (1 + eps) regardless of the betas.
        let mut params: ParamSet<f64> = ParamSet::new();
        params.insert("p", arr2(&[[1.0]]));
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), arr2(&[[1.0]]));
        let mut adam = Adam::new();
        adam.step(&mut params, &grads, 0.1);
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((params.get("p")[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn store_round_trip_preserves_order_and_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mlp = Mlp::new("m", vec![4, 3, 1], Activation::Relu).unwrap();
        let params: ParamSet<f32> = mlp.init(&mut rng);
        let meta = crate::store::StoreMeta {
            stage: "test".into(),
            config_hash: "h".into(),
            seed: 0,
            timestamp: 0,
            extra: Default::default(),
        };
        let store = params.to_store(meta).unwrap();
        let back = ParamSet::from_store(&store).unwrap();
        assert_eq!(back, params);
    }
}
