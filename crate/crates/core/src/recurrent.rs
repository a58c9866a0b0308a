//! Retrieval state: the GRU transition, the learnable initial state, the
//! linear value head, and exact reverse-mode gradients for each.
//!
//! Gate convention:
//!
//! ```text
//! z  = σ(Wz x + Uz h + bz)
//! r  = σ(Wr x + Ur h + br)
//! h~ = tanh(Wh x + Uh (r ⊙ h) + bh)
//! h' = (1 - z) ⊙ h + z ⊙ h~
//! ```

use ndarray::{Array1, Array2, ArrayView1, Zip};
use rand::Rng;

use crate::error::{check_dim, Error, Result};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn uniform_matrix(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (d as f64).sqrt();
    Array2::from_shape_fn((d, d), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub wz: Array2<f64>,
    pub uz: Array2<f64>,
    pub bz: Array1<f64>,
    pub wr: Array2<f64>,
    pub ur: Array2<f64>,
    pub br: Array1<f64>,
    pub wh: Array2<f64>,
    pub uh: Array2<f64>,
    pub bh: Array1<f64>,
}

impl GruParams {
    pub fn zeros(d: usize) -> Self {
        let m = || Array2::zeros((d, d));
        let v = || Array1::zeros(d);
        Self {
            wz: m(),
            uz: m(),
            bz: v(),
            wr: m(),
            ur: m(),
            br: v(),
            wh: m(),
            uh: m(),
            bh: v(),
        }
    }

    /// Matrices uniform in (-1/√d, 1/√d), biases zero.
    pub fn random(d: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(d);
        for m in [&mut p.wz, &mut p.uz, &mut p.wr, &mut p.ur, &mut p.wh, &mut p.uh] {
            *m = uniform_matrix(d, rng);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.bz.len()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.iter().all(|x| x.is_finite()))
            && self.biases().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    fn matrices(&self) -> [&Array2<f64>; 6] {
        [&self.wz, &self.uz, &self.wr, &self.ur, &self.wh, &self.uh]
    }

    fn biases(&self) -> [&Array1<f64>; 3] {
        [&self.bz, &self.br, &self.bh]
    }

    /// Adds `other` into `self`, element by element.
    pub fn accumulate(&mut self, other: &GruParams) {
        self.wz += &other.wz;
        self.uz += &other.uz;
        self.bz += &other.bz;
        self.wr += &other.wr;
        self.ur += &other.ur;
        self.br += &other.br;
        self.wh += &other.wh;
        self.uh += &other.uh;
        self.bh += &other.bh;
    }

    /// One GRU step.
    pub fn step(&self, h: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Tape)> {
        let d = self.dim();
        check_dim(d, h.len())?;
        check_dim(d, x.len())?;
        let z = (self.wz.dot(&x) + self.uz.dot(&h) + &self.bz).mapv(sigmoid);
        let r = (self.wr.dot(&x) + self.ur.dot(&h) + &self.br).mapv(sigmoid);
        let rh = &r * &h;
        let cand = (self.wh.dot(&x) + self.uh.dot(&rh) + &self.bh).mapv(f64::tanh);
        let h_next = blend(&z, h, &cand);
        let tape = Tape {
            h: h.to_owned(),
            x: x.to_owned(),
            z,
            r,
            rh,
            cand,
            h_next: h_next.clone(),
        };
        Ok((h_next, tape))
    }

    /// Reverse-mode pass for one step: gradients of a scalar loss with respect
    /// to the parameters, the incoming state, and the input, given its
    /// gradient with respect to the step's output.
    pub fn backward(&self, tape: &Tape, grad_h_next: ArrayView1<'_, f64>) -> Result<StepGrads> {
        let d = self.dim();
        check_dim(d, tape.h.len())?;
        check_dim(d, grad_h_next.len())?;
        let g = grad_h_next;

        let d_cand = &g * &tape.z;
        let d_z = &g * &(&tape.cand - &tape.h);
        let mut d_h = &g * &tape.z.mapv(|z| 1.0 - z);

        let d_cand_pre = &d_cand * &tape.cand.mapv(|c| 1.0 - c * c);
        let d_rh = self.uh.t().dot(&d_cand_pre);
        let d_r = &d_rh * &tape.h;
        d_h += &(&d_rh * &tape.r);

        let d_z_pre = &d_z * &tape.z.mapv(|z| z * (1.0 - z));
        let d_r_pre = &d_r * &tape.r.mapv(|r| r * (1.0 - r));

        d_h += &self.uz.t().dot(&d_z_pre);
        d_h += &self.ur.t().dot(&d_r_pre);
        let d_x = self.wz.t().dot(&d_z_pre) + self.wr.t().dot(&d_r_pre) + self.wh.t().dot(&d_cand_pre);

        let params = GruParams {
            wz: outer(&d_z_pre, &tape.x),
            uz: outer(&d_z_pre, &tape.h),
            bz: d_z_pre.clone(),
            wr: outer(&d_r_pre, &tape.x),
            ur: outer(&d_r_pre, &tape.h),
            br: d_r_pre.clone(),
            wh: outer(&d_cand_pre, &tape.x),
            uh: outer(&d_cand_pre, &tape.rh),
            bh: d_cand_pre,
        };
        Ok(StepGrads {
            params,
            h: d_h,
            x: d_x,
        })
    }
}

fn blend(z: &Array1<f64>, h: ArrayView1<'_, f64>, cand: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(z.len());
    Zip::from(&mut out)
        .and(z)
        .and(h)
        .and(cand)
        .for_each(|o, &z, &h, &c| *o = (1.0 - z) * h + z * c);
    out
}

pub(crate) fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

/// Activations recorded by [`GruParams::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    pub h: Array1<f64>,
    pub x: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub rh: Array1<f64>,
    pub cand: Array1<f64>,
    pub h_next: Array1<f64>,
}

impl Tape {
    /// Recomputes the output from the recorded gates.
    pub fn replay(&self) -> Array1<f64> {
        blend(&self.z, self.h.view(), &self.cand)
    }
}

#[derive(Debug, Clone)]
pub struct StepGrads {
    pub params: GruParams,
    pub h: Array1<f64>,
    pub x: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub s0: Array1<f64>,
}

impl InitialState {
    pub fn zeros(d: usize) -> Self {
        Self { s0: Array1::zeros(d) }
    }
}

/// `V(s) = v · s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueHead {
    pub v: Array1<f64>,
}

impl ValueHead {
    pub fn zeros(d: usize) -> Self {
        Self { v: Array1::zeros(d) }
    }

    pub fn value(&self, s: ArrayView1<'_, f64>) -> Result<f64> {
        check_dim(self.v.len(), s.len())?;
        Ok(self.v.dot(&s))
    }
}

/// The first retrieval state: one GRU step from `s0` consuming the query embedding.
pub fn init_state(
    initial: &InitialState,
    query_embedding: ArrayView1<'_, f64>,
    gru: &GruParams,
) -> Result<(Array1<f64>, Tape)> {
    if !initial.s0.iter().all(|x| x.is_finite()) {
        return Err(Error::Invariant("initial state has non-finite entries".into()));
    }
    gru.step(initial.s0.view(), query_embedding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_halve_the_state() {
        let gru = GruParams::zeros(3);
        let h = array![0.4, -1.0, 2.0];
        let (next, _) = gru.step(h.view(), array![9.0, 9.0, 9.0].view()).unwrap();
        assert_eq!(next, &h * 0.5);
    }

    #[test]
    fn zero_state_is_a_fixed_point_without_input_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut gru = GruParams::random(4, &mut rng);
        gru.wz.fill(0.0);
        gru.wr.fill(0.0);
        gru.wh.fill(0.0);
        let (next, _) = gru.step(Array1::zeros(4).view(), array![1.0, 2.0, 3.0, 4.0].view()).unwrap();
        assert_eq!(next, Array1::<f64>::zeros(4));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gru = GruParams::zeros(3);
        let err = gru.step(Array1::zeros(2).view(), Array1::zeros(3).view()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gru = GruParams::random(3, &mut rng);
        let (_, tape) = gru.step(array![0.1, 0.2, 0.3].view(), array![1.0, -1.0, 0.5].view()).unwrap();
        let g = gru.backward(&tape, Array1::zeros(3).view()).unwrap();
        assert!(g.h.iter().chain(g.x.iter()).all(|&x| x == 0.0));
        assert!(g.params.wz.iter().chain(g.params.uh.iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn tape_replay_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = GruParams::random(5, &mut rng);
        let h = Array1::from_shape_fn(5, |i| (i as f64 * 0.37).sin());
        let x = Array1::from_shape_fn(5, |i| (i as f64 * 1.1).cos());
        let (next, tape) = gru.step(h.view(), x.view()).unwrap();
        assert_eq!(tape.replay(), next);
        assert_eq!(tape.h_next, next);
    }

    #[test]
    fn value_head_projects() {
        let head = ValueHead { v: array![1.0, 0.0, 0.0] };
        assert_eq!(head.value(array![3.5, 7.0, -2.0].view()).unwrap(), 3.5);
        assert_eq!(ValueHead::zeros(3).value(array![1.0, 2.0, 3.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn zero_gru_initial_state_ignores_query() {
        let s0 = InitialState { s0: array![2.0, -4.0] };
        let gru = GruParams::zeros(2);
        let (a, _) = init_state(&s0, array![1.0, 0.0].view(), &gru).unwrap();
        let (b, _) = init_state(&s0, array![0.0, 1.0].view(), &gru).unwrap();
        assert_eq!(a, array![1.0, -2.0]);
        assert_eq!(a, b);
    }
}
