//! Policy/value network: conv → ReLU → dense → ReLU → LSTM → (logits, value).
//!
//! Parameters live in one flat `Vec<f64>` so the optimizer and checkpoints
//! never need to know the architecture. Gradients are computed by hand with
//! truncated backpropagation through time over one unroll.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomg::{Observation, WINDOW_SIZE};

const IN_CH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 16 conv channels, dense width 32, LSTM width 64.
    Paper,
    /// 4 / 16 / 32, for runs on a laptop.
    Desk,
    /// 2 / 4 / 8, for gradient checks.
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub conv_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub mlp_width: usize,
    pub lstm_width: usize,
    pub num_actions: usize,
}

impl PolicySpec {
    pub fn new(profile: Profile, num_actions: usize) -> Self {
        let (conv_channels, mlp_width, lstm_width) = match profile {
            Profile::Paper => (16, 32, 64),
            Profile::Desk => (4, 16, 32),
            Profile::Tiny => (2, 4, 8),
        };
        Self {
            conv_channels,
            kernel: 3,
            stride: 1,
            mlp_width,
            lstm_width,
            num_actions,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 {
            return Err(Error::config("learner.stride", "only stride 1 is supported"));
        }
        if self.kernel == 0 || self.kernel > WINDOW_SIZE {
            return Err(Error::config("learner.kernel", format!("kernel must lie in 1..={WINDOW_SIZE}")));
        }
        if self.conv_channels == 0 || self.mlp_width == 0 || self.lstm_width == 0 || self.num_actions == 0 {
            return Err(Error::config("learner", "layer widths and action count must be positive"));
        }
        Ok(())
    }

    /// Side of the conv feature map.
    pub fn conv_side(&self) -> usize {
        WINDOW_SIZE - self.kernel + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    conv_w: Block,
    conv_b: Block,
    mlp_w: Block,
    mlp_b: Block,
    lstm_w: Block,
    lstm_b: Block,
    pol_w: Block,
    pol_b: Block,
    val_w: Block,
    val_b: Block,
    total: usize,
}

impl Layout {
    fn new(spec: &PolicySpec) -> Self {
        let mut offset = 0;
        let mut block = |len: usize| {
            let b = Block { offset, len };
            offset += len;
            b
        };
        let k = spec.kernel;
        let flat = spec.conv_channels * spec.conv_side().pow(2);
        let lstm_in = spec.mlp_width + 1 + spec.lstm_width;
        let conv_w = block(spec.conv_channels * k * k * IN_CH);
        let conv_b = block(spec.conv_channels);
        let mlp_w = block(spec.mlp_width * flat);
        let mlp_b = block(spec.mlp_width);
        let lstm_w = block(4 * spec.lstm_width * lstm_in);
        let lstm_b = block(4 * spec.lstm_width);
        let pol_w = block(spec.num_actions * spec.lstm_width);
        let pol_b = block(spec.num_actions);
        let val_w = block(spec.lstm_width);
        let val_b = block(1);
        Self {
            conv_w,
            conv_b,
            mlp_w,
            mlp_b,
            lstm_w,
            lstm_b,
            pol_w,
            pol_b,
            val_w,
            val_b,
            total: offset,
        }
    }
}

fn slice(p: &[f64], b: Block) -> &[f64] {
    &p[b.offset..b.offset + b.len]
}

fn slice_mut(p: &mut [f64], b: Block) -> &mut [f64] {
    &mut p[b.offset..b.offset + b.len]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y += W x`, with `W` row-major `rows × x.len()`.
fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let n = x.len();
    for (row, out) in w.chunks_exact(n).zip(y.iter_mut()) {
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += Wᵀ dy`, `dW += dy xᵀ`.
fn matvec_back(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let n = x.len();
    for (dw_row, &g) in dw.chunks_exact_mut(n).zip(dy) {
        if g != 0.0 {
            for (d, &xi) in dw_row.iter_mut().zip(x) {
                *d += g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        for (row, &g) in w.chunks_exact(n).zip(dy) {
            if g != 0.0 {
                for (d, &wi) in dx.iter_mut().zip(row) {
                    *d += g * wi;
                }
            }
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    input: Vec<f64>,
    conv: Vec<f64>,
    mlp: Vec<f64>,
    /// `[mlp; last_reward; h_prev]`.
    lstm_in: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

/// Forward pass over a sequence, with caches.
#[derive(Debug, Clone)]
pub struct Unroll {
    pub steps: Vec<StepCache>,
    pub final_state: RecurrentState,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub spec: PolicySpec,
    layout: Layout,
}

impl Network {
    pub fn new(spec: PolicySpec) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        Ok(Self { spec, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            h: vec![0.0; self.spec.lstm_width],
            c: vec![0.0; self.spec.lstm_width],
        }
    }

    /// Orthogonal-style init scaled per layer, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let s = &self.spec;
        let l = &self.layout;
        let mut p = vec![0.0; l.total];
        let relu_gain = std::f64::consts::SQRT_2;
        let fan_conv = s.kernel * s.kernel * IN_CH;
        slice_mut(&mut p, l.conv_w).copy_from_slice(&orthogonal(s.conv_channels, fan_conv, relu_gain, rng));
        let flat = s.conv_channels * s.conv_side().pow(2);
        slice_mut(&mut p, l.mlp_w).copy_from_slice(&orthogonal(s.mlp_width, flat, relu_gain, rng));
        let lstm_in = s.mlp_width + 1 + s.lstm_width;
        slice_mut(&mut p, l.lstm_w).copy_from_slice(&orthogonal(4 * s.lstm_width, lstm_in, 1.0, rng));
        slice_mut(&mut p, l.pol_w).copy_from_slice(&orthogonal(s.num_actions, s.lstm_width, 0.01, rng));
        slice_mut(&mut p, l.val_w).copy_from_slice(&orthogonal(1, s.lstm_width, 1.0, rng));
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::arg(format!(
                "parameter vector has {} entries, network needs {}",
                params.len(),
                self.layout.total
            )));
        }
        Ok(())
    }

    fn check_state(&self, state: &RecurrentState) -> Result<()> {
        if state.h.len() != self.spec.lstm_width || state.c.len() != self.spec.lstm_width {
            return Err(Error::arg(format!("recurrent state width must be {}", self.spec.lstm_width)));
        }
        Ok(())
    }

    /// One step: `(logits, value, next_state)`.
    pub fn forward(&self, params: &[f64], obs: &Observation, state: &RecurrentState) -> Result<(Vec<f64>, f64, RecurrentState)> {
        self.check_params(params)?;
        self.check_state(state)?;
        let cache = self.step(params, obs, state)?;
        let next = RecurrentState {
            h: cache.h.clone(),
            c: cache.c.clone(),
        };
        Ok((cache.logits, cache.value, next))
    }

    pub fn unroll(&self, params: &[f64], observations: &[Observation], state: &RecurrentState) -> Result<Unroll> {
        self.check_params(params)?;
        self.check_state(state)?;
        let mut steps = Vec::with_capacity(observations.len());
        let mut cur = state.clone();
        for obs in observations {
            let cache = self.step(params, obs, &cur)?;
            cur = RecurrentState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            };
            steps.push(cache);
        }
        Ok(Unroll { steps, final_state: cur })
    }

    fn step(&self, p: &[f64], obs: &Observation, state: &RecurrentState) -> Result<StepCache> {
        if obs.pixels.len() != Observation::LEN {
            return Err(Error::arg(format!(
                "observation has {} bytes, expected {}",
                obs.pixels.len(),
                Observation::LEN
            )));
        }
        let s = &self.spec;
        let l = &self.layout;
        let input: Vec<f64> = obs.pixels.iter().map(|&b| b as f64 / 255.0).collect();

        let side = s.conv_side();
        let k = s.kernel;
        let conv_w = slice(p, l.conv_w);
        let conv_b = slice(p, l.conv_b);
        let mut conv = vec![0.0; s.conv_channels * side * side];
        for o in 0..s.conv_channels {
            let w = &conv_w[o * k * k * IN_CH..(o + 1) * k * k * IN_CH];
            for r in 0..side {
                for c in 0..side {
                    let mut acc = conv_b[o];
                    for kr in 0..k {
                        let row = &input[((r + kr) * WINDOW_SIZE + c) * IN_CH..((r + kr) * WINDOW_SIZE + c + k) * IN_CH];
                        let wr = &w[kr * k * IN_CH..(kr + 1) * k * IN_CH];
                        acc += row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    conv[(o * side + r) * side + c] = acc.max(0.0);
                }
            }
        }

        let mut mlp = slice(p, l.mlp_b).to_vec();
        matvec_acc(slice(p, l.mlp_w), &conv, &mut mlp);
        mlp.iter_mut().for_each(|x| *x = x.max(0.0));

        let hw = s.lstm_width;
        let mut lstm_in = Vec::with_capacity(s.mlp_width + 1 + hw);
        lstm_in.extend_from_slice(&mlp);
        lstm_in.push(obs.last_reward);
        lstm_in.extend_from_slice(&state.h);
        let mut gates = slice(p, l.lstm_b).to_vec();
        matvec_acc(slice(p, l.lstm_w), &lstm_in, &mut gates);
        for (j, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hw..3 * hw).contains(&j) { g.tanh() } else { sigmoid(*g) };
        }
        let (i, rest) = gates.split_at(hw);
        let (f, rest) = rest.split_at(hw);
        let (g, o) = rest.split_at(hw);
        let c: Vec<f64> = (0..hw).map(|j| f[j] * state.c[j] + i[j] * g[j]).collect();
        let h: Vec<f64> = (0..hw).map(|j| o[j] * c[j].tanh()).collect();

        let mut logits = slice(p, l.pol_b).to_vec();
        matvec_acc(slice(p, l.pol_w), &h, &mut logits);
        let value = slice(p, l.val_b)[0] + slice(p, l.val_w).iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();

        Ok(StepCache {
            input,
            conv,
            mlp,
            lstm_in,
            c_prev: state.c.clone(),
            gates,
            c,
            h,
            logits,
            value,
        })
    }

    /// Accumulates into `grad` the gradient of a loss whose derivatives with
    /// respect to each step's logits and value are given. No gradient flows
    /// into the unroll's initial state.
    pub fn backward(&self, p: &[f64], unroll: &Unroll, dlogits: &[Vec<f64>], dvalues: &[f64], grad: &mut [f64]) {
        let s = &self.spec;
        let l = &self.layout;
        let hw = s.lstm_width;
        let side = s.conv_side();
        let k = s.kernel;
        let mut dh_next = vec![0.0; hw];
        let mut dc_next = vec![0.0; hw];

        for (t, step) in unroll.steps.iter().enumerate().rev() {
            let dl = &dlogits[t];
            let dv = dvalues[t];

            let mut dh = dh_next.clone();
            matvec_back(slice(p, l.pol_w), &step.h, dl, slice_mut(grad, l.pol_w), Some(&mut dh));
            slice_mut(grad, l.pol_b).iter_mut().zip(dl).for_each(|(g, d)| *g += d);
            slice_mut(grad, l.val_b)[0] += dv;
            if dv != 0.0 {
                let vw = slice(p, l.val_w);
                for (j, gw) in slice_mut(grad, l.val_w).iter_mut().enumerate() {
                    *gw += dv * step.h[j];
                    dh[j] += dv * vw[j];
                }
            }

            let (i, rest) = step.gates.split_at(hw);
            let (f, rest) = rest.split_at(hw);
            let (g, o) = rest.split_at(hw);
            let mut dz = vec![0.0; 4 * hw];
            for j in 0..hw {
                let tc = step.c[j].tanh();
                let d_o = dh[j] * tc;
                let dc = dh[j] * o[j] * (1.0 - tc * tc) + dc_next[j];
                let di = dc * g[j];
                let dg = dc * i[j];
                let df = dc * step.c_prev[j];
                dc_next[j] = dc * f[j];
                dz[j] = di * i[j] * (1.0 - i[j]);
                dz[hw + j] = df * f[j] * (1.0 - f[j]);
                dz[2 * hw + j] = dg * (1.0 - g[j] * g[j]);
                dz[3 * hw + j] = d_o * o[j] * (1.0 - o[j]);
            }
            slice_mut(grad, l.lstm_b).iter_mut().zip(&dz).for_each(|(g, d)| *g += d);
            let mut dx = vec![0.0; step.lstm_in.len()];
            matvec_back(slice(p, l.lstm_w), &step.lstm_in, &dz, slice_mut(grad, l.lstm_w), Some(&mut dx));
            dh_next.copy_from_slice(&dx[s.mlp_width + 1..]);

            let mut dmlp: Vec<f64> = dx[..s.mlp_width].to_vec();
            for (d, &a) in dmlp.iter_mut().zip(&step.mlp) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            if dmlp.iter().all(|&d| d == 0.0) {
                continue;
            }
            slice_mut(grad, l.mlp_b).iter_mut().zip(&dmlp).for_each(|(g, d)| *g += d);
            let mut dconv = vec![0.0; step.conv.len()];
            matvec_back(slice(p, l.mlp_w), &step.conv, &dmlp, slice_mut(grad, l.mlp_w), Some(&mut dconv));

            let gb = l.conv_b;
            let gw = l.conv_w;
            for o in 0..s.conv_channels {
                for r in 0..side {
                    for c in 0..side {
                        let idx = (o * side + r) * side + c;
                        if step.conv[idx] <= 0.0 {
                            continue;
                        }
                        let d = dconv[idx];
                        grad[gb.offset + o] += d;
                        let wbase = gw.offset + o * k * k * IN_CH;
                        for kr in 0..k {
                            let start = ((r + kr) * WINDOW_SIZE + c) * IN_CH;
                            let row = &step.input[start..start + k * IN_CH];
                            let wr = &mut grad[wbase + kr * k * IN_CH..wbase + (kr + 1) * k * IN_CH];
                            for (gwi, &x) in wr.iter_mut().zip(row) {
                                *gwi += d * x;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Zeroes the policy head so every action is equally likely.
    pub fn zero_policy_head(&self, params: &mut [f64]) {
        slice_mut(params, self.layout.pol_w).fill(0.0);
        slice_mut(params, self.layout.pol_b).fill(0.0);
    }

    pub fn zero_value_head(&self, params: &mut [f64]) {
        slice_mut(params, self.layout.val_w).fill(0.0);
        slice_mut(params, self.layout.val_b).fill(0.0);
    }
}

/// A `rows × cols` matrix with orthonormal rows (or columns, whichever are
/// fewer), times `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, dim) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}
