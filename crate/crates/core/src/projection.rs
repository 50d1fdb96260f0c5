//! The projection adapter: a three-layer ReLU MLP mapping modality-B
//! embeddings into modality-A space,
//!
//! ```text
//! out = W3 · relu(W2 · relu(W1 · x + b1) + b2) + b3
//! ```
//!
//! with `W1: h×d`, `W2: h×h`, `W3: d×h`. Gradients are derived by hand for
//! this fixed architecture. All arithmetic is `f64`.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{format, validation, Result};

pub const DEFAULT_EMBED_DIM: usize = 768;
pub const DEFAULT_HIDDEN_DIM: usize = 2048;

pub const PRJV1_MAGIC: &[u8; 6] = b"PRJV1\0";
pub const PRJV1_HEADER_LEN: usize = 14;

/// Number of weights plus biases for an adapter of shape `(d, h)`.
pub fn param_count(d: usize, h: usize) -> usize {
    h * d + h + h * h + h + d * h + d
}

fn tensor_lens(d: usize, h: usize) -> [usize; 6] {
    [h * d, h, h * h, h, d * h, d]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    d: usize,
    h: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

/// Gradients with the same layout as [`ProjectionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub act2: Vec<f64>,
    pub output: Vec<f64>,
}

// out[r] = b[r] + Σ_c w[r, c] · x[c]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for ((o, bias), row) in out.iter_mut().zip(b).zip(w.chunks_exact(cols)) {
        *o = bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

// out += Wᵀ · g
fn transpose_mul_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gr, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gr == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(row) {
            *o += gr * a;
        }
    }
}

// acc += g ⊗ x
fn outer_acc(g: &[f64], x: &[f64], acc: &mut [f64]) {
    for (gr, row) in g.iter().zip(acc.chunks_exact_mut(x.len())) {
        if *gr == 0.0 {
            continue;
        }
        for (a, v) in row.iter_mut().zip(x) {
            *a += gr * v;
        }
    }
}

fn relu(pre: &[f64]) -> Vec<f64> {
    pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

impl ProjectionParams {
    /// All-zero parameters (the constant-zero map).
    pub fn zeros(d: usize, h: usize) -> Self {
        let [l1, l2, l3, l4, l5, l6] = tensor_lens(d, h);
        Self {
            d,
            h,
            w1: vec![0.0; l1],
            b1: vec![0.0; l2],
            w2: vec![0.0; l3],
            b2: vec![0.0; l4],
            w3: vec![0.0; l5],
            b3: vec![0.0; l6],
        }
    }

    /// Builds parameters from `[W1, b1, W2, b2, W3, b3]`, row-major.
    pub fn from_tensors(d: usize, h: usize, tensors: [Vec<f64>; 6]) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(validation(format!("d={d} h={h}, both must be positive")));
        }
        let lens = tensor_lens(d, h);
        for (i, (t, want)) in tensors.iter().zip(lens).enumerate() {
            if t.len() != want {
                return Err(validation(format!(
                    "tensor {i} has {} entries, expected {want}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(validation(format!("tensor {i} has a non-finite entry")));
            }
        }
        let [w1, b1, w2, b2, w3, b3] = tensors;
        Ok(Self {
            d,
            h,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.d
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    pub fn param_count(&self) -> usize {
        param_count(self.d, self.h)
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.d {
            return Err(validation(format!(
                "input has length {}, projection expects {}",
                input.len(),
                self.d
            )));
        }
        let mut pre1 = vec![0.0; self.h];
        affine(&self.w1, &self.b1, input, &mut pre1);
        let act1 = relu(&pre1);
        let mut pre2 = vec![0.0; self.h];
        affine(&self.w2, &self.b2, &act1, &mut pre2);
        let act2 = relu(&pre2);
        let mut output = vec![0.0; self.d];
        affine(&self.w3, &self.b3, &act2, &mut output);
        Ok(ForwardTrace {
            input: input.to_vec(),
            pre1,
            act1,
            pre2,
            act2,
            output,
        })
    }

    /// Output only, without keeping the trace.
    pub fn project(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|t| t.output)
    }

    pub fn project_f32(&self, input: &[f32]) -> Result<Vec<f64>> {
        let x: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
        self.project(&x)
    }

    /// Chain rule through the network; returns parameter gradients and the
    /// gradient with respect to the input. ReLU passes gradient only where
    /// its pre-activation is strictly positive.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_output: &[f64],
    ) -> Result<(ParamGrads, Vec<f64>)> {
        let mut grads = ParamGrads::zeros(self.d, self.h);
        let grad_input = self.backward_accumulate(trace, grad_output, &mut grads)?;
        Ok((grads, grad_input))
    }

    /// Like [`backward`](Self::backward) but adds into existing gradients.
    pub fn backward_accumulate(
        &self,
        trace: &ForwardTrace,
        grad_output: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<Vec<f64>> {
        let (d, h) = (self.d, self.h);
        let shapes_ok = grad_output.len() == d
            && trace.input.len() == d
            && trace.output.len() == d
            && [&trace.pre1, &trace.act1, &trace.pre2, &trace.act2]
                .iter()
                .all(|v| v.len() == h)
            && grads.b1.len() == h
            && grads.b3.len() == d
            && grads.w2.len() == h * h;
        if !shapes_ok {
            return Err(validation(
                "backward: trace, gradient and parameter shapes disagree",
            ));
        }

        outer_acc(grad_output, &trace.act2, &mut grads.w3);
        grads
            .b3
            .iter_mut()
            .zip(grad_output)
            .for_each(|(a, g)| *a += g);

        let mut g_pre2 = vec![0.0; h];
        transpose_mul_acc(&self.w3, grad_output, &mut g_pre2);
        for (g, p) in g_pre2.iter_mut().zip(&trace.pre2) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        outer_acc(&g_pre2, &trace.act1, &mut grads.w2);
        grads.b2.iter_mut().zip(&g_pre2).for_each(|(a, g)| *a += g);

        let mut g_pre1 = vec![0.0; h];
        transpose_mul_acc(&self.w2, &g_pre2, &mut g_pre1);
        for (g, p) in g_pre1.iter_mut().zip(&trace.pre1) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        outer_acc(&g_pre1, &trace.input, &mut grads.w1);
        grads.b1.iter_mut().zip(&g_pre1).for_each(|(a, g)| *a += g);

        let mut grad_input = vec![0.0; d];
        transpose_mul_acc(&self.w1, &g_pre1, &mut grad_input);
        Ok(grad_input)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PRJV1_HEADER_LEN + self.param_count() * 8);
        out.extend_from_slice(PRJV1_MAGIC);
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.h as u32).to_le_bytes());
        for t in self.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PRJV1_HEADER_LEN || &bytes[..6] != PRJV1_MAGIC {
            return Err(format("not a PRJV1 checkpoint"));
        }
        let d = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        if d == 0 || h == 0 {
            return Err(format(format!("checkpoint shape d={d} h={h} is empty")));
        }
        let payload = &bytes[PRJV1_HEADER_LEN..];
        if payload.len() as u64 != param_count(d, h) as u64 * 8 {
            return Err(format(format!(
                "payload is {} bytes, shape ({d}, {h}) needs {}",
                payload.len(),
                param_count(d, h) * 8
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let tensors = tensor_lens(d, h).map(|n| values.by_ref().take(n).collect::<Vec<_>>());
        Self::from_tensors(d, h, tensors)
    }
}

impl ParamGrads {
    pub fn zeros(d: usize, h: usize) -> Self {
        let [l1, l2, l3, l4, l5, l6] = tensor_lens(d, h);
        Self {
            w1: vec![0.0; l1],
            b1: vec![0.0; l2],
            w2: vec![0.0; l3],
            b2: vec![0.0; l4],
            w3: vec![0.0; l5],
            b3: vec![0.0; l6],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn fill_zero(&mut self) {
        for t in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ] {
            t.fill(0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

/// He-style uniform initialization: each weight matrix draws from
/// `U[-√(6/fan_in), √(6/fan_in)]`; biases start at zero.
pub fn init_params(d: usize, h: usize, seed: u64) -> Result<ProjectionParams> {
    if d == 0 || h == 0 {
        return Err(validation(format!("d={d} h={h}, both must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ProjectionParams::zeros(d, h);
    let fan_ins = [d, h, h];
    let [w1, _, w2, _, w3, _] = params.tensors_mut();
    for (w, fan_in) in [w1, w2, w3].into_iter().zip(fan_ins) {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in w.iter_mut() {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

pub fn save_params(params: &ProjectionParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, params.to_bytes())?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ProjectionParams> {
    ProjectionParams::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Straight-line evaluation of the adapter formula with explicit index
    /// loops, independent of `affine`.
    #[allow(clippy::needless_range_loop)]
    fn formula_oracle(p: &ProjectionParams, x: &[f64]) -> Vec<f64> {
        let (d, h) = (p.d, p.h);
        let mut z1 = vec![0.0; h];
        for r in 0..h {
            let mut s = p.b1[r];
            for c in 0..d {
                s += p.w1[r * d + c] * x[c];
            }
            z1[r] = s.max(0.0);
        }
        let mut z2 = vec![0.0; h];
        for r in 0..h {
            let mut s = p.b2[r];
            for c in 0..h {
                s += p.w2[r * h + c] * z1[c];
            }
            z2[r] = s.max(0.0);
        }
        (0..d)
            .map(|r| p.b3[r] + (0..h).map(|c| p.w3[r * h + c] * z2[c]).sum::<f64>())
            .collect()
    }

    fn randomized(d: usize, h: usize, seed: u64) -> ProjectionParams {
        let mut p = init_params(d, h, seed).unwrap();
        let [_, b1, _, b2, _, b3] = p.tensors_mut();
        for (b, s) in [b1, b2, b3].into_iter().zip(100..) {
            b.copy_from_slice(&random_vec(b.len(), seed + s));
        }
        p
    }

    #[test]
    fn full_size_parameter_count() {
        assert_eq!(param_count(768, 2048), 7_344_896);
        let p = init_params(768, 2048, 0).unwrap();
        assert_eq!(p.param_count(), 7_344_896);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let p = init_params(4, 8, 3).unwrap();
        assert_eq!(p, init_params(4, 8, 3).unwrap());
        assert_ne!(p, init_params(4, 8, 4).unwrap());
        for (d, h) in [(4, 8), (1, 1), (13, 5)] {
            let p = init_params(d, h, 9).unwrap();
            let bound = (6.0 / d as f64).sqrt();
            assert!(p.w1.iter().all(|v| v.abs() <= bound));
            assert!(p.b1.iter().chain(&p.b2).chain(&p.b3).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = ProjectionParams::zeros(5, 7);
        let out = p.project(&random_vec(5, 1)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_relus_output_b3() {
        let mut p = init_params(4, 6, 2).unwrap();
        p.b1.fill(-1e6);
        p.b2.fill(-1e6);
        p.b3 = vec![0.5, -1.0, 2.0, 0.0];
        let out = p.project(&random_vec(4, 8)).unwrap();
        assert_eq!(out, p.b3);
    }

    #[test]
    fn matches_formula_oracle() {
        let p = randomized(6, 10, 5);
        let x = random_vec(6, 55);
        let got = p.project(&x).unwrap();
        let want = formula_oracle(&p, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = init_params(3, 4, 0).unwrap();
        assert!(matches!(p.forward(&[1.0, 2.0]), Err(Error::Validation(_))));
        let t = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.backward(&t, &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gradient() {
        let p = randomized(3, 4, 1);
        let t = p.forward(&random_vec(3, 2)).unwrap();
        let (g, gi) = p.backward(&t, &[0.0; 3]).unwrap();
        assert!(g.is_zero());
        assert!(gi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_first_layer_gradient() {
        let mut p = randomized(3, 4, 1);
        p.b1.fill(-1e6);
        let t = p.forward(&random_vec(3, 2)).unwrap();
        let (g, gi) = p.backward(&t, &[1.0, -2.0, 0.5]).unwrap();
        assert!(g.w1.iter().all(|&v| v == 0.0));
        assert!(gi.iter().all(|&v| v == 0.0));
        assert_eq!(g.b3, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn finite_difference_gradient_check() {
        let (d, h) = (3, 4);
        let p = randomized(d, h, 21);
        let x = random_vec(d, 22);
        let upstream = random_vec(d, 23);
        let objective = |q: &ProjectionParams, x: &[f64]| -> f64 {
            q.project(x)
                .unwrap()
                .iter()
                .zip(&upstream)
                .map(|(o, u)| o * u)
                .sum()
        };
        let t = p.forward(&x).unwrap();
        let (g, gi) = p.backward(&t, &upstream).unwrap();
        let step = 1e-5;
        for ti in 0..6 {
            for k in 0..p.tensors()[ti].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[ti][k] += step;
                let mut minus = p.clone();
                minus.tensors_mut()[ti][k] -= step;
                let fd = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * step);
                let an = g.tensors()[ti][k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3));
            }
        }
        for k in 0..d {
            let mut xp = x.clone();
            xp[k] += step;
            let mut xm = x.clone();
            xm[k] -= step;
            let fd = (objective(&p, &xp) - objective(&p, &xm)) / (2.0 * step);
            assert!((fd - gi[k]).abs() <= 1e-4 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let p = randomized(5, 3, 8);
        let bytes = p.to_bytes();
        assert_eq!(bytes.len(), PRJV1_HEADER_LEN + param_count(5, 3) * 8);
        assert_eq!(ProjectionParams::from_bytes(&bytes).unwrap(), p);

        let mut bad = bytes.clone();
        bad[0] = b'E';
        assert!(matches!(
            ProjectionParams::from_bytes(&bad),
            Err(Error::Format(_))
        ));
        let mut shape = bytes.clone();
        shape[6..10].copy_from_slice(&6u32.to_le_bytes());
        assert!(matches!(
            ProjectionParams::from_bytes(&shape),
            Err(Error::Format(_))
        ));
        assert!(ProjectionParams::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn full_size_checkpoint_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.prj");
        let p = ProjectionParams::zeros(768, 2048);
        save_params(&p, &path).unwrap();
        let len = std::fs::metadata(&path).unwrap().len();
        assert_eq!(len, 14 + 7_344_896 * 8);
        assert_eq!(load_params(&path).unwrap(), p);
    }
}
