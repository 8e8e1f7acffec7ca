//! Parameter initialization and the small layer vocabulary shared by the
//! encoders, decoder and offset predictor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BoundParams, ParameterStore, Tape, Tensor, Var};
use crate::error::Result;

/// Draws parameters in call order from one seeded stream.
pub(crate) struct Init {
    pub store: ParameterStore,
    rng: ChaCha8Rng,
    slope: f64,
}

impl Init {
    pub fn new(seed: u64, slope: f64) -> Self {
        Init { store: ParameterStore::new(), rng: ChaCha8Rng::seed_from_u64(seed), slope }
    }

    /// Uniform fan-in scaling with the leaky-relu gain.
    fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = (6.0 / ((1.0 + self.slope * self.slope) * fan_in as f64)).sqrt();
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::new(shape, data).expect("positive shape")
    }

    /// `x [n, fan_in] -> [n, fan_out]`.
    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let w = self.uniform(vec![fan_in, fan_out], fan_in);
        self.store.insert(format!("{name}.w"), w)?;
        self.store.insert(format!("{name}.b"), Tensor::zeros(vec![fan_out]))
    }

    pub fn linear_zero(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.store.insert(format!("{name}.w"), Tensor::zeros(vec![fan_in, fan_out]))?;
        self.store.insert(format!("{name}.b"), Tensor::zeros(vec![fan_out]))
    }

    /// Chain of linear layers `name.0`, `name.1`, ... through `dims`.
    pub fn mlp(&mut self, name: &str, dims: &[usize]) -> Result<()> {
        for (i, pair) in dims.windows(2).enumerate() {
            self.linear(&format!("{name}.{i}"), pair[0], pair[1])?;
        }
        Ok(())
    }

    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let w = self.uniform(vec![c_out, c_in, k, k], c_in * k * k);
        self.store.insert(format!("{name}.w"), w)?;
        self.store.insert(format!("{name}.b"), Tensor::zeros(vec![c_out]))
    }
}

/// Forward-pass context: the tape plus the bound parameters.
pub(crate) struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a BoundParams,
    pub slope: f64,
}

impl Fwd<'_> {
    pub fn param(&self, name: &str) -> Result<Var> {
        self.params.var(name)
    }

    pub fn linear(&mut self, name: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        let y = self.tape.matmul(x, w)?;
        self.tape.add(y, b)
    }

    pub fn act(&mut self, x: Var) -> Result<Var> {
        self.tape.leaky_relu(x, self.slope)
    }

    /// `layers` linear layers with activations between them, and after the
    /// last one when `act_last`.
    pub fn mlp(&mut self, name: &str, x: Var, layers: usize, act_last: bool) -> Result<Var> {
        let mut h = x;
        for i in 0..layers {
            h = self.linear(&format!("{name}.{i}"), h)?;
            if i + 1 < layers || act_last {
                h = self.act(h)?;
            }
        }
        Ok(h)
    }

    /// Repeats a `[1, w]` row `n` times.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        self.tape.index_select(x, 0, vec![0; n])
    }

    /// Residual single-head self-attention over the rows of `x [n, d]`.
    pub fn attention(&mut self, name: &str, x: Var) -> Result<Var> {
        let d = self.tape.value(x).shape()[1];
        let q = self.linear(&format!("{name}.q"), x)?;
        let k = self.linear(&format!("{name}.k"), x)?;
        let v = self.linear(&format!("{name}.v"), x)?;
        let kt = self.tape.transpose(k)?;
        let logits = self.tape.matmul(q, kt)?;
        let logits = self.tape.scale(logits, 1.0 / (d as f64).sqrt())?;
        let weights = self.tape.softmax(logits, 1)?;
        let mixed = self.tape.matmul(weights, v)?;
        self.tape.add(x, mixed)
    }
}
