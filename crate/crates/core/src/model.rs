//! All trainable parameters of the iterative retriever, viewed either as
//! typed components or as a flat list of named arrays (for the optimizer and
//! checkpoints).

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::recurrent::{init_state, GruParams, InitialState, Tape, ValueHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Matrices uniform in (-1/√d, 1/√d); biases, `s0` and `v` zero.
    #[default]
    Uniform,
    /// The first state is a scaled `tanh` of the query embedding, `Wq` undoes
    /// the scale, and later steps keep the state unchanged. The untrained
    /// policy then ranks like a single similarity search up to exact ties.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverModel {
    pub gru: GruParams,
    pub initial: InitialState,
    pub policy: PolicyParams,
    pub value: ValueHead,
}

const IDENTITY_GATE: f64 = 40.0;
const IDENTITY_SCALE: f64 = 0.1;

/// Names of the parameter arrays, in canonical order.
pub const PARAM_NAMES: [&str; 13] = [
    "gru.wz", "gru.uz", "gru.bz", "gru.wr", "gru.ur", "gru.br", "gru.wh", "gru.uh", "gru.bh",
    "initial.s0", "policy.wq", "policy.bq", "value.v",
];

impl RetrieverModel {
    pub fn new(d: usize, beta: f64, scheme: InitScheme, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        let model = match scheme {
            InitScheme::Uniform => Self {
                gru: GruParams::random(d, rng),
                initial: InitialState::zeros(d),
                policy: PolicyParams::new(
                    crate::recurrent::uniform_matrix(d, rng),
                    Array1::zeros(d),
                    beta,
                )?,
                value: ValueHead::zeros(d),
            },
            InitScheme::Identity => {
                // The update gate reads the mean of the state. It is 1 for the
                // all-ones s0, which opens the gate on the first step, and
                // near zero for the small scaled query kept afterwards. The
                // scale keeps tanh close to linear, so Q(s1) is almost q.
                let mut gru = GruParams::zeros(d);
                gru.wh = Array2::eye(d) * IDENTITY_SCALE;
                gru.uz.fill(IDENTITY_GATE / d as f64);
                gru.bz.fill(-IDENTITY_GATE / 2.0);
                let initial = InitialState {
                    s0: Array1::ones(d),
                };
                Self {
                    gru,
                    initial,
                    policy: PolicyParams::new(Array2::eye(d) / IDENTITY_SCALE, Array1::zeros(d), beta)?,
                    value: ValueHead::zeros(d),
                }
            }
        };
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.policy.dim()
    }

    pub fn initial_state(&self, query_embedding: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Tape)> {
        init_state(&self.initial, query_embedding, &self.gru)
    }

    pub fn zeros_like(&self) -> ModelGrads {
        let d = self.dim();
        ModelGrads {
            gru: GruParams::zeros(d),
            s0: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            v: Array1::zeros(d),
        }
    }

    /// Parameter arrays in [`PARAM_NAMES`] order, as `(name, shape, values)`.
    pub fn to_named(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let d = self.dim();
        let g = &self.gru;
        let views: [(&[f64], Vec<usize>); 13] = [
            (g.wz.as_slice().expect("contiguous"), vec![d, d]),
            (g.uz.as_slice().expect("contiguous"), vec![d, d]),
            (g.bz.as_slice().expect("contiguous"), vec![d]),
            (g.wr.as_slice().expect("contiguous"), vec![d, d]),
            (g.ur.as_slice().expect("contiguous"), vec![d, d]),
            (g.br.as_slice().expect("contiguous"), vec![d]),
            (g.wh.as_slice().expect("contiguous"), vec![d, d]),
            (g.uh.as_slice().expect("contiguous"), vec![d, d]),
            (g.bh.as_slice().expect("contiguous"), vec![d]),
            (self.initial.s0.as_slice().expect("contiguous"), vec![d]),
            (self.policy.wq.as_slice().expect("contiguous"), vec![d, d]),
            (self.policy.bq.as_slice().expect("contiguous"), vec![d]),
            (self.value.v.as_slice().expect("contiguous"), vec![d]),
        ];
        PARAM_NAMES
            .iter()
            .zip(views)
            .map(|(name, (values, shape))| (name.to_string(), shape, values.to_vec()))
            .collect()
    }

    /// Inverse of [`RetrieverModel::to_named`].
    pub fn from_named(arrays: &[(String, Vec<usize>, Vec<f64>)], beta: f64) -> Result<Self> {
        let find = |name: &str| -> Result<&(String, Vec<usize>, Vec<f64>)> {
            arrays
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter array {name}")))
        };
        let d = find("policy.bq")?.2.len();
        let mat = |name: &str| -> Result<Array2<f64>> {
            let (_, shape, values) = find(name)?;
            if shape != &[d, d] {
                return Err(Error::Checkpoint(format!("{name} has shape {shape:?}, expected [{d}, {d}]")));
            }
            Array2::from_shape_vec((d, d), values.clone()).map_err(|e| Error::Checkpoint(e.to_string()))
        };
        let vec = |name: &str| -> Result<Array1<f64>> {
            let (_, shape, values) = find(name)?;
            if shape != &[d] {
                return Err(Error::Checkpoint(format!("{name} has shape {shape:?}, expected [{d}]")));
            }
            Ok(Array1::from(values.clone()))
        };
        Ok(Self {
            gru: GruParams {
                wz: mat("gru.wz")?,
                uz: mat("gru.uz")?,
                bz: vec("gru.bz")?,
                wr: mat("gru.wr")?,
                ur: mat("gru.ur")?,
                br: vec("gru.br")?,
                wh: mat("gru.wh")?,
                uh: mat("gru.uh")?,
                bh: vec("gru.bh")?,
            },
            initial: InitialState { s0: vec("initial.s0")? },
            policy: PolicyParams::new(mat("policy.wq")?, vec("policy.bq")?, beta)?,
            value: ValueHead { v: vec("value.v")? },
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let g = &mut self.gru;
        vec![
            g.wz.as_slice_mut().expect("contiguous"),
            g.uz.as_slice_mut().expect("contiguous"),
            g.bz.as_slice_mut().expect("contiguous"),
            g.wr.as_slice_mut().expect("contiguous"),
            g.ur.as_slice_mut().expect("contiguous"),
            g.br.as_slice_mut().expect("contiguous"),
            g.wh.as_slice_mut().expect("contiguous"),
            g.uh.as_slice_mut().expect("contiguous"),
            g.bh.as_slice_mut().expect("contiguous"),
            self.initial.s0.as_slice_mut().expect("contiguous"),
            self.policy.wq.as_slice_mut().expect("contiguous"),
            self.policy.bq.as_slice_mut().expect("contiguous"),
            self.value.v.as_slice_mut().expect("contiguous"),
        ]
    }

    pub fn num_params(&self) -> usize {
        let d = self.dim();
        7 * d * d + 6 * d
    }

    pub fn is_finite(&self) -> bool {
        self.to_named().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Rounds every parameter to the nearest `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for slice in self.params_mut() {
            slice.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        }
    }
}

/// Gradients with the same layout as [`RetrieverModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub gru: GruParams,
    pub s0: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub v: Array1<f64>,
}

impl ModelGrads {
    pub fn accumulate(&mut self, other: &ModelGrads) {
        self.gru.accumulate(&other.gru);
        self.s0 += &other.s0;
        self.wq += &other.wq;
        self.bq += &other.bq;
        self.v += &other.v;
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Gradient slices in [`PARAM_NAMES`] order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let g = &self.gru;
        vec![
            g.wz.as_slice().expect("contiguous"),
            g.uz.as_slice().expect("contiguous"),
            g.bz.as_slice().expect("contiguous"),
            g.wr.as_slice().expect("contiguous"),
            g.ur.as_slice().expect("contiguous"),
            g.br.as_slice().expect("contiguous"),
            g.wh.as_slice().expect("contiguous"),
            g.uh.as_slice().expect("contiguous"),
            g.bh.as_slice().expect("contiguous"),
            self.s0.as_slice().expect("contiguous"),
            self.wq.as_slice().expect("contiguous"),
            self.bq.as_slice().expect("contiguous"),
            self.v.as_slice().expect("contiguous"),
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let g = &mut self.gru;
        vec![
            g.wz.as_slice_mut().expect("contiguous"),
            g.uz.as_slice_mut().expect("contiguous"),
            g.bz.as_slice_mut().expect("contiguous"),
            g.wr.as_slice_mut().expect("contiguous"),
            g.ur.as_slice_mut().expect("contiguous"),
            g.br.as_slice_mut().expect("contiguous"),
            g.wh.as_slice_mut().expect("contiguous"),
            g.uh.as_slice_mut().expect("contiguous"),
            g.bh.as_slice_mut().expect("contiguous"),
            self.s0.as_slice_mut().expect("contiguous"),
            self.wq.as_slice_mut().expect("contiguous"),
            self.bq.as_slice_mut().expect("contiguous"),
            self.v.as_slice_mut().expect("contiguous"),
        ]
    }

    /// Zeroes every gradient array whose name satisfies `pred`.
    pub fn zero_matching(&mut self, pred: impl Fn(&str) -> bool) {
        for (name, slice) in PARAM_NAMES.iter().zip(self.slices_mut()) {
            if pred(name) {
                slice.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn named_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = RetrieverModel::new(5, 1.0, InitScheme::Uniform, &mut rng).unwrap();
        m.initial.s0[2] = 0.75;
        m.value.v[1] = -0.5;
        let named = m.to_named();
        assert_eq!(named.len(), PARAM_NAMES.len());
        for ((n, _, _), expected) in named.iter().zip(PARAM_NAMES) {
            assert_eq!(n, expected);
        }
        let back = RetrieverModel::from_named(&named, 1.0).unwrap();
        assert_eq!(back, m);
        assert_eq!(named.iter().map(|(_, _, v)| v.len()).sum::<usize>(), m.num_params());
    }

    #[test]
    fn identity_scheme_queries_with_the_embedding_and_keeps_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = RetrieverModel::new(3, 1.0, InitScheme::Identity, &mut rng).unwrap();
        let q = ndarray::array![0.6, -0.8, 0.0];
        let (s1, _) = m.initial_state(q.view()).unwrap();
        let query = m.policy.query_vector(s1.view()).unwrap();
        for (a, b) in query.iter().zip(&q) {
            assert!((a - b).abs() < 3e-3, "{query} vs {q}");
            assert!((a - (IDENTITY_SCALE * b).tanh() / IDENTITY_SCALE).abs() < 1e-6);
        }
        let (s2, _) = m.gru.step(s1.view(), ndarray::array![0.0, 1.0, 0.0].view()).unwrap();
        for (a, b) in s2.iter().zip(&s1) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
