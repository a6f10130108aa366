use rand::Rng;

use crate::autodiff::{AutodiffError, ParameterSet, Tape, Tensor, Var, LOG_STD_MAX, LOG_STD_MIN};

/// Fully connected ReLU network with a linear output layer.
///
/// Parameters are registered as `w0, b0, w1, b1, …` with `w_i: [in, out]` and
/// `b_i: [1, out]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: ParameterSet,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut params = ParameterSet::new();
        for (i, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let weights = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            let bias = (0..w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            params.add(format!("w{i}"), Tensor::matrix(w[0], w[1], weights).expect("sized"));
            params.add(format!("b{i}"), Tensor::matrix(1, w[1], bias).expect("sized"));
        }
        Self { sizes, params }
    }

    /// Layer sizes including input and output.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Zeroes the output layer's weights and sets its bias.
    pub fn set_output_layer(&mut self, bias: &[f64]) {
        let last = self.sizes.len() - 2;
        self.params.value_mut(2 * last).iter_mut().for_each(|x| *x = 0.0);
        self.params.value_mut(2 * last + 1).copy_from_slice(bias);
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for i in 0..layers {
            let w = tape.param(&self.params, 2 * i);
            let b = tape.param(&self.params, 2 * i + 1);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Running per-feature mean/std (Welford) used to standardise network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Normalizer {
    /// Standard deviations below this are floored to avoid huge input scales.
    pub const MIN_STD: f64 = 1e-2;

    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_raw(count: f64, mean: Vec<f64>, m2: Vec<f64>) -> Self {
        Self { count, mean, m2 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|&s| {
                if self.count < 2.0 {
                    1.0
                } else {
                    (s / self.count).sqrt().max(Self::MIN_STD)
                }
            })
            .collect()
    }

    /// `(scale, shift)` with `normalised = x·scale + shift`.
    pub fn affine(&self) -> (Vec<f64>, Vec<f64>) {
        let std = self.std();
        let scale: Vec<f64> = std.iter().map(|s| 1.0 / s).collect();
        let shift = self.mean.iter().zip(&scale).map(|(m, k)| -m * k).collect();
        (scale, shift)
    }
}

/// MLP head producing a diagonal Gaussian `(μ, log σ)` of dimension `out_dim`.
#[derive(Debug, Clone)]
pub struct GaussianNet {
    mlp: Mlp,
    out_dim: usize,
    normalizer: Option<Normalizer>,
}

impl GaussianNet {
    pub fn new(input: usize, hidden: &[usize], out_dim: usize, normalize: bool, rng: &mut impl Rng) -> Self {
        Self {
            mlp: Mlp::new(input, hidden, 2 * out_dim, rng),
            out_dim,
            normalizer: normalize.then(|| Normalizer::new(input)),
        }
    }

    pub fn from_parts(mlp: Mlp, normalizer: Option<Normalizer>) -> Self {
        let out_dim = mlp.output_dim() / 2;
        Self {
            mlp,
            out_dim,
            normalizer,
        }
    }

    /// Zero output weights: `μ ≡ 0` and `log σ ≡ log_std` until trained.
    pub fn zero_output(&mut self, log_std: f64) {
        let mut bias = vec![0.0; self.out_dim];
        bias.extend(std::iter::repeat_n(log_std, self.out_dim));
        self.mlp.set_output_layer(&bias);
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn params(&self) -> &ParameterSet {
        self.mlp.params()
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        self.mlp.params_mut()
    }

    pub fn normalizer(&self) -> Option<&Normalizer> {
        self.normalizer.as_ref()
    }

    pub fn observe_input(&mut self, x: &[f64]) {
        if let Some(n) = &mut self.normalizer {
            n.observe(x);
        }
    }

    /// `(μ, log σ)`, with `log σ` clamped to `[LOG_STD_MIN, LOG_STD_MAX]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var), AutodiffError> {
        let x = match &self.normalizer {
            Some(n) => {
                let (scale, shift) = n.affine();
                tape.col_affine(x, &scale, &shift)?
            }
            None => x,
        };
        let out = self.mlp.forward(tape, x)?;
        let mu = tape.slice_cols(out, 0, self.out_dim)?;
        let raw = tape.slice_cols(out, self.out_dim, 2 * self.out_dim)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mu, log_std))
    }
}

impl Mlp {
    /// Rebuilds a network of the given layer sizes from flat values in registration order.
    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<Self, AutodiffError> {
        if sizes.len() < 2 {
            return Err(AutodiffError::Length {
                shape: sizes.to_vec(),
                len: flat.len(),
            });
        }
        let mut params = ParameterSet::new();
        for (i, w) in sizes.windows(2).enumerate() {
            params.add(format!("w{i}"), Tensor::zeros(&[w[0], w[1]]));
            params.add(format!("b{i}"), Tensor::zeros(&[1, w[1]]));
        }
        params.load_flat(flat)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }
}
