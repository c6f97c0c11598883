//! Peephole bidirectional LSTM over display-ordered item sequences.
//!
//! Gate layout per direction: forget and update gates read
//! `[q_prev, w_t, c_prev]`, the candidate cell reads `[q_prev, w_t]` only,
//! and the output gate reads `[q_prev, w_t, c_new]` (the freshly updated
//! cell). Hidden width is per direction; the bidirectional output
//! concatenates both directions per step.

use crate::autodiff::{Tape, Var};
use crate::nn::{xavier_uniform, ParamSet, TapeParams};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand_chacha::ChaCha20Rng;

/// Architecture of one bidirectional peephole LSTM.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub input_dim: usize,
    /// Hidden width per direction.
    pub hidden: usize,
    pub prefix: String,
}

const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

impl BiLstm {
    pub fn new(prefix: &str, input_dim: usize, hidden: usize) -> Self {
        assert!(input_dim > 0 && hidden > 0);
        BiLstm {
            input_dim,
            hidden,
            prefix: prefix.to_string(),
        }
    }

    /// Width of each step's output, both directions concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Fresh Xavier-initialized gate parameters for both directions.
    pub fn init<S: Scalar>(&self, rng: &mut ChaCha20Rng) -> ParamSet<S> {
        let mut params = ParamSet::new();
        let (h, dw) = (self.hidden, self.input_dim);
        for dir in DIRECTIONS {
            // Gate input widths: peephole gates see [q, w, c], the candidate
            // sees [q, w].
            for (gate, fan_in) in [
                ("w_f", 2 * h + dw),
                ("w_d", 2 * h + dw),
                ("w_c", h + dw),
                ("w_o", 2 * h + dw),
            ] {
                params.insert(
                    format!("{}.{dir}.{gate}", self.prefix),
                    xavier_uniform(h, fan_in, rng),
                );
            }
            for bias in ["b_f", "b_d", "b_c", "b_o"] {
                params.insert(format!("{}.{dir}.{bias}", self.prefix), Array2::zeros((1, h)));
            }
        }
        params
    }

    /// Runs both directions over `steps` (each `(batch, input_dim)`, ordered
    /// by display position) and returns one `(batch, 2·hidden)` output per
    /// step, aligned with the input order.
    pub fn run<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &TapeParams,
        steps: &[Var],
    ) -> Vec<Var> {
        assert!(!steps.is_empty(), "LSTM needs at least one step");
        let batch = tape.value(steps[0]).nrows();

        let forward = self.run_direction(tape, params, "fwd", batch, steps.iter().cloned());
        let mut backward =
            self.run_direction(tape, params, "bwd", batch, steps.iter().rev().cloned());
        backward.reverse();

        forward
            .into_iter()
            .zip(backward)
            .map(|(f, b)| tape.concat_cols(&[f, b]))
            .collect()
    }

    fn run_direction<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &TapeParams,
        dir: &str,
        batch: usize,
        steps: impl Iterator<Item = Var>,
    ) -> Vec<Var> {
        let gate = |name: &str| params.var(&format!("{}.{dir}.{name}", self.prefix));
        let (w_f, b_f) = (gate("w_f"), gate("b_f"));
        let (w_d, b_d) = (gate("w_d"), gate("b_d"));
        let (w_c, b_c) = (gate("w_c"), gate("b_c"));
        let (w_o, b_o) = (gate("w_o"), gate("b_o"));

        let mut q = tape.leaf(Array2::zeros((batch, self.hidden)));
        let mut c = tape.leaf(Array2::zeros((batch, self.hidden)));
        let mut outputs = Vec::new();
        for w_t in steps {
            let x_peep = tape.concat_cols(&[q, w_t, c]);
            let f = affine_sigmoid(tape, x_peep, w_f, b_f);
            let d = affine_sigmoid(tape, x_peep, w_d, b_d);

            let x_cand = tape.concat_cols(&[q, w_t]);
            let pre_c = affine(tape, x_cand, w_c, b_c);
            let c_tilde = tape.tanh(pre_c);

            let keep = tape.mul(f, c);
            let write = tape.mul(d, c_tilde);
            c = tape.add(keep, write);

            let x_out = tape.concat_cols(&[q, w_t, c]);
            let o = affine_sigmoid(tape, x_out, w_o, b_o);
            let c_squashed = tape.tanh(c);
            q = tape.mul(o, c_squashed);
            outputs.push(q);
        }
        outputs
    }
}

fn affine<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, b: Var) -> Var {
    let wt = tape.transpose(w);
    let z = tape.matmul(x, wt);
    tape.add_row(z, b)
}

fn affine_sigmoid<S: Scalar>(tape: &mut Tape<S>, x: Var, w: Var, b: Var) -> Var {
    let z = affine(tape, x, w, b);
    tape.sigmoid(z)
}
