use rand::Rng;
use serde::{Deserialize, Serialize};

use super::normalize::Normalizer;
use crate::error::{Error, Result};

/// Output activation of a head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// `scale·sigmoid(z)`, in `(0, scale)`.
    Power,
    /// `scale·softplus(z)`, strictly positive.
    Time,
    /// `scale·z`.
    Raw,
}

/// A contiguous slice of the last layer with its own activation. `scale`
/// holds one entry per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub scale: Vec<f64>,
}

impl HeadSpec {
    pub fn new(kind: HeadKind, scale: Vec<f64>) -> Self {
        Self { kind, scale }
    }

    pub fn uniform(kind: HeadKind, size: usize, scale: f64) -> Self {
        Self {
            kind,
            scale: vec![scale; size],
        }
    }

    pub fn size(&self) -> usize {
        self.scale.len()
    }
}

/// Dense ReLU network layout: `layer_sizes = [input, hidden.., output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], heads: Vec<HeadSpec>) -> Result<Self> {
        let output = heads.iter().map(HeadSpec::size).sum();
        let mut layer_sizes = vec![input];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(output);
        let spec = Self { layer_sizes, heads };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 3 {
            return Err(Error::Config(
                "network needs at least one hidden layer".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let out: usize = self.heads.iter().map(HeadSpec::size).sum();
        if out != self.output_size() {
            return Err(Error::Shape {
                expected: self.output_size(),
                got: out,
            });
        }
        for h in &self.heads {
            if h.kind != HeadKind::Raw && h.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::Config(format!(
                    "{:?} head scales must be positive",
                    h.kind
                )));
            }
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// One affine layer. `weights[j * n_out + k]` connects input `j` to output `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend_from_slice(&self.bias);
        for (j, &xj) in x.iter().enumerate() {
            // post-ReLU inputs are mostly zero
            if xj == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.n_out..(j + 1) * self.n_out];
            for (yk, &w) in y.iter_mut().zip(row) {
                *yk += xj * w;
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.layers.iter_mut().flat_map(Layer::params_mut) {
            *v *= k;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(Layer::params)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub spec: MlpSpec,
    pub normalizer: Normalizer,
    pub layers: Vec<Layer>,
}

/// Activations kept by [`MlpModel::forward_trace`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l]` the post-ReLU output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation of the output layer.
    logits: Vec<f64>,
    pub output: Vec<f64>,
}

/// A network evaluated along its last input with the others held fixed.
/// Each call returns the outputs and their derivatives with respect to that
/// input from a single forward-mode pass; the first layer's contribution of
/// the fixed inputs is computed once. No allocation after construction.
pub struct LastInputProbe<'a> {
    model: &'a MlpModel,
    base: Vec<f64>,
    a: Vec<f64>,
    da: Vec<f64>,
    y: Vec<f64>,
    dy: Vec<f64>,
}

impl<'a> LastInputProbe<'a> {
    /// `fixed` holds every normalized input but the last.
    pub fn new(model: &'a MlpModel, fixed: &[f64]) -> Result<Self> {
        let n_in = model.spec.input_size();
        if fixed.len() + 1 != n_in {
            return Err(Error::Shape {
                expected: n_in - 1,
                got: fixed.len(),
            });
        }
        let first = &model.layers[0];
        let mut base = first.bias.clone();
        for (j, &xj) in fixed.iter().enumerate() {
            let row = &first.weights[j * first.n_out..(j + 1) * first.n_out];
            for (b, &w) in base.iter_mut().zip(row) {
                *b += xj * w;
            }
        }
        let widest = model.spec.layer_sizes.iter().copied().max().unwrap_or(0);
        let buf = || Vec::with_capacity(widest);
        Ok(Self {
            model,
            base,
            a: buf(),
            da: buf(),
            y: buf(),
            dy: buf(),
        })
    }

    /// Outputs at last input `z` into `out`, their `z`-derivatives into `d_out`.
    pub fn eval(&mut self, z: f64, out: &mut [f64], d_out: &mut [f64]) {
        let layers = &self.model.layers;
        let first = &layers[0];
        let last_row = &first.weights[(first.n_in - 1) * first.n_out..];
        self.y.clear();
        self.dy.clear();
        self.y
            .extend(self.base.iter().zip(last_row).map(|(b, w)| b + z * w));
        self.dy.extend_from_slice(last_row);
        for layer in &layers[1..] {
            std::mem::swap(&mut self.a, &mut self.y);
            std::mem::swap(&mut self.da, &mut self.dy);
            self.y.clear();
            self.y.extend_from_slice(&layer.bias);
            self.dy.clear();
            self.dy.resize(layer.n_out, 0.0);
            for (j, (&aj, &daj)) in self.a.iter().zip(&self.da).enumerate() {
                // inactive ReLU: value and tangent are both zero
                if aj <= 0.0 {
                    continue;
                }
                let row = &layer.weights[j * layer.n_out..(j + 1) * layer.n_out];
                for ((yk, dyk), &w) in self.y.iter_mut().zip(self.dy.iter_mut()).zip(row) {
                    *yk += aj * w;
                    *dyk += daj * w;
                }
            }
        }
        let mut k = 0;
        for head in &self.model.spec.heads {
            for &s in &head.scale {
                let (zk, dz) = (self.y[k], self.dy[k]);
                let (v, d) = match head.kind {
                    HeadKind::Power => {
                        let g = sigmoid(zk);
                        (s * g, s * g * (1.0 - g) * dz)
                    }
                    HeadKind::Time => (s * softplus(zk), s * sigmoid(zk) * dz),
                    HeadKind::Raw => (s * zk, s * dz),
                };
                out[k] = v;
                d_out[k] = d;
                k += 1;
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl MlpModel {
    /// Uniform `(-a, a)` weights with `a = sqrt(3 / fan_in)`, i.e. variance
    /// `1 / fan_in`; zero biases.
    pub fn init<R: Rng + ?Sized>(
        spec: MlpSpec,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        if normalizer.len() != spec.input_size() {
            return Err(Error::Shape {
                expected: spec.input_size(),
                got: normalizer.len(),
            });
        }
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| {
                let a = init_bound(w[0]);
                let mut l = Layer::zeros(w[0], w[1]);
                l.weights
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-a..a));
                l
            })
            .collect();
        Ok(Self {
            spec,
            normalizer,
            layers,
        })
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    /// Head outputs in physical units for an already normalized input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        if input.len() != self.spec.input_size() {
            return Err(Error::Shape {
                expected: self.spec.input_size(),
                got: input.len(),
            });
        }
        let depth = self.layers.len();
        let mut acts = Vec::with_capacity(depth);
        acts.push(input.to_vec());
        let mut logits = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.n_out);
            layer.apply(&acts[l], &mut y);
            if l + 1 < depth {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(y);
            } else {
                logits = y;
            }
        }
        let mut output = Vec::with_capacity(logits.len());
        let mut k = 0;
        for head in &self.spec.heads {
            for &s in &head.scale {
                let z = logits[k];
                output.push(match head.kind {
                    HeadKind::Power => s * sigmoid(z),
                    HeadKind::Time => s * softplus(z),
                    HeadKind::Raw => s * z,
                });
                k += 1;
            }
        }
        Ok(Trace {
            acts,
            logits,
            output,
        })
    }

    /// Accumulates parameter gradients for `d_output = ∂L/∂output` into
    /// `grads` and returns `∂L/∂input`.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grads: &mut Gradients) -> Vec<f64> {
        let mut delta = Vec::with_capacity(trace.logits.len());
        let mut k = 0;
        for head in &self.spec.heads {
            for &s in &head.scale {
                let z = trace.logits[k];
                let d = match head.kind {
                    HeadKind::Power => {
                        let sg = sigmoid(z);
                        s * sg * (1.0 - sg)
                    }
                    HeadKind::Time => s * sigmoid(z),
                    HeadKind::Raw => s,
                };
                delta.push(d_output[k] * d);
                k += 1;
            }
        }
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            let x = &trace.acts[l];
            for (gb, &d) in g.bias.iter_mut().zip(&delta) {
                *gb += d;
            }
            let mut d_in = vec![0.0; layer.n_in];
            for j in 0..layer.n_in {
                let row = j * layer.n_out..(j + 1) * layer.n_out;
                let xj = x[j];
                if xj != 0.0 {
                    for (gw, &d) in g.weights[row.clone()].iter_mut().zip(&delta) {
                        *gw += xj * d;
                    }
                }
                // ReLU mask of the layer below; the raw input is never masked.
                if l == 0 || xj > 0.0 {
                    d_in[j] = layer.weights[row]
                        .iter()
                        .zip(&delta)
                        .map(|(w, d)| w * d)
                        .sum();
                }
            }
            delta = d_in;
        }
        delta
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(Layer::params)
            .copied()
            .collect()
    }

    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Shape {
                expected: self.n_params(),
                got: values.len(),
            });
        }
        for (p, &v) in self
            .layers
            .iter_mut()
            .flat_map(Layer::params_mut)
            .zip(values)
        {
            *p = v;
        }
        Ok(())
    }

    pub(crate) fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::params_mut)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(Layer::params)
            .all(|v| v.is_finite())
    }

    /// Shapes of the layers and normalizer agree with the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.normalizer.len() != self.spec.input_size() {
            return Err(Error::Shape {
                expected: self.spec.input_size(),
                got: self.normalizer.len(),
            });
        }
        if self.layers.len() + 1 != self.spec.layer_sizes.len() {
            return Err(Error::Shape {
                expected: self.spec.layer_sizes.len() - 1,
                got: self.layers.len(),
            });
        }
        for (l, w) in self.layers.iter().zip(self.spec.layer_sizes.windows(2)) {
            if l.n_in != w[0]
                || l.n_out != w[1]
                || l.weights.len() != w[0] * w[1]
                || l.bias.len() != w[1]
            {
                return Err(Error::Shape {
                    expected: w[0] * w[1],
                    got: l.weights.len(),
                });
            }
        }
        if !self.is_finite() {
            return Err(Error::Domain("model has non-finite parameters".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            spec: self.spec.clone(),
            normalizer: self.normalizer.clone(),
            weights: self.layers.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Inverse of [`MlpModel::to_json`]; every parameter reloads bit-exactly.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        let model = Self {
            spec: file.spec,
            normalizer: file.normalizer,
            layers: file.weights,
        };
        model.validate()?;
        Ok(model)
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

/// On-disk model document. Each layer's weights are a row-major
/// `n_in × n_out` matrix.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    spec: MlpSpec,
    normalizer: Normalizer,
    weights: Vec<Layer>,
}

/// Half-width of the uniform initialisation for a given fan-in.
pub fn init_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> MlpSpec {
        MlpSpec::new(
            3,
            &[6, 5],
            vec![
                HeadSpec::uniform(HeadKind::Power, 2, 0.01),
                HeadSpec::new(HeadKind::Time, vec![2e-5, 3e-5]),
            ],
        )
        .unwrap()
    }

    fn model(seed: u64) -> MlpModel {
        MlpModel::init(
            spec(),
            Normalizer::identity(3),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    #[test]
    fn probe_matches_forward_and_its_slope() {
        let heads = vec![
            HeadSpec::uniform(HeadKind::Power, 1, 0.01),
            HeadSpec::uniform(HeadKind::Time, 2, 3e-5),
            HeadSpec::uniform(HeadKind::Raw, 1, 0.5),
        ];
        let spec = MlpSpec::new(4, &[7, 6], heads).unwrap();
        let mut m = MlpModel::init(
            spec,
            Normalizer::identity(4),
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        let v: Vec<f64> = m
            .params_flat()
            .iter()
            .enumerate()
            .map(|(k, p)| p + 0.02 * (k % 5) as f64)
            .collect();
        m.set_params_flat(&v).unwrap();
        let fixed = [0.4, -0.7, 1.1];
        let mut probe = LastInputProbe::new(&m, &fixed).unwrap();
        let (mut out, mut d) = ([0.0; 4], [0.0; 4]);
        for z in [-1.3, 0.2, 0.9] {
            probe.eval(z, &mut out, &mut d);
            let at = |z: f64| m.forward(&[fixed[0], fixed[1], fixed[2], z]).unwrap();
            let (f, up, dn) = (at(z), at(z + 1e-6), at(z - 1e-6));
            for k in 0..4 {
                assert!(
                    (out[k] - f[k]).abs() <= 1e-13 * f[k].abs(),
                    "{k}: {} vs {}",
                    out[k],
                    f[k]
                );
                let fd = (up[k] - dn[k]) / 2e-6;
                assert!(
                    (d[k] - fd).abs() <= 1e-5 * fd.abs().max(1e-12 * f[k].abs()),
                    "{k}: {} vs {fd}",
                    d[k]
                );
            }
        }
        assert!(LastInputProbe::new(&m, &[0.0; 2]).is_err());
    }

    #[test]
    fn init_bound_example() {
        assert!((init_bound(10) - 0.3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn init_variance_is_inverse_fan_in() {
        let s = MlpSpec::new(
            10,
            &[10_000],
            vec![HeadSpec::uniform(HeadKind::Raw, 1, 1.0)],
        )
        .unwrap();
        let m = MlpModel::init(
            s,
            Normalizer::identity(10),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let w = &m.layers[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var * 10.0 - 1.0).abs() < 0.02, "var {var}");
        assert!(m.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(model(4), model(4));
        assert_ne!(model(4), model(5));
    }

    #[test]
    fn zero_weights_give_head_midpoints() {
        let mut m = model(1);
        let zeros = vec![0.0; m.n_params()];
        m.set_params_flat(&zeros).unwrap();
        let y = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(y[0], 0.005);
        assert_eq!(y[1], 0.005);
        assert!((y[2] - 2e-5 * std::f64::consts::LN_2).abs() < 1e-20);
        assert!((y[3] - 3e-5 * std::f64::consts::LN_2).abs() < 1e-20);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(
            model(1).forward(&[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
        assert!(MlpSpec::new(3, &[], vec![HeadSpec::uniform(HeadKind::Raw, 1, 1.0)]).is_err());
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let m = model(9);
        let x = [0.7, -0.4, 1.3];
        // L = Σ c_k y_k with distinct weights per output
        let c = [3.0e2, -1.0e2, 2.0e4, 1.0e4];
        let loss = |m: &MlpModel| {
            m.forward(&x)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(y, c)| y * c)
                .sum::<f64>()
        };
        let mut g = Gradients::zeros_like(&m);
        let tr = m.forward_trace(&x).unwrap();
        let dx = m.backward(&tr, &c, &mut g);
        let analytic = g.flat();
        let base = m.params_flat();
        for k in 0..base.len() {
            let h = 1e-6;
            let mut mp = m.clone();
            let mut v = base.clone();
            v[k] += h;
            mp.set_params_flat(&v).unwrap();
            let up = loss(&mp);
            v[k] -= 2.0 * h;
            mp.set_params_flat(&v).unwrap();
            let dn = loss(&mp);
            let fd = (up - dn) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
            assert!(err < 1e-5, "param {k}: fd {fd} vs {}", analytic[k]);
        }
        for j in 0..3 {
            let h = 1e-6;
            let mut xp = x;
            xp[j] += h;
            let up: f64 = m
                .forward(&xp)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(y, c)| y * c)
                .sum();
            xp[j] -= 2.0 * h;
            let dn: f64 = m
                .forward(&xp)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(y, c)| y * c)
                .sum();
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - dx[j]).abs() <= 1e-5 * fd.abs().max(1e-6), "input {j}");
        }
    }

    #[test]
    fn json_reload_is_bit_exact() {
        let mut m = model(5);
        m.normalizer = Normalizer {
            log10: vec![true, false, true],
            mean: vec![-3.1, 0.1 + 0.2, 1e-300],
            std: vec![0.7, 1.0 / 3.0, 2.0],
        };
        let back = MlpModel::from_json(&m.to_json().unwrap()).unwrap();
        let bits = |m: &MlpModel| {
            m.params_flat()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back, m);
    }

    #[test]
    fn json_with_wrong_shape_is_rejected() {
        let m = model(5);
        let mut v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        v["weights"][0]["bias"].as_array_mut().unwrap().pop();
        assert!(MlpModel::from_json(&v.to_string()).is_err());
        v["version"] = 99.into();
        assert!(MlpModel::from_json(&v.to_string()).is_err());
    }

    proptest::proptest! {
        #[test]
        fn heads_respect_ranges(seed in 0u64..1000, x in proptest::collection::vec(-50.0f64..50.0, 3)) {
            let m = model(seed);
            let y = m.forward(&x).unwrap();
            proptest::prop_assert!(y[0] >= 0.0 && y[0] <= 0.01 && y[1] >= 0.0 && y[1] <= 0.01);
            proptest::prop_assert!(y[2] > 0.0 && y[3] > 0.0);
            proptest::prop_assert!(y.iter().all(|v| v.is_finite()));
        }
    }
}
