//! Dense and skip-connection networks with exact input derivatives.
//!
//! Every batch is evaluated in fixed-size chunks. Inside a chunk the value rows
//! and the tangent rows (one block per requested input direction) are stacked
//! into a single matrix, so each layer is one matrix product. The reverse pass
//! runs through both the values and the tangents, which yields exact parameter
//! gradients of objectives that depend on first-order input derivatives.

use std::fmt::Write as _;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{PincError, Result};
use crate::physics::NormalizationRefs;

pub const OUTPUT_DIM: usize = 2;
pub const FORMAT_VERSION: u64 = 1;
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    Tanh,
    Sinusoidal,
    Swish,
}

impl ActivationKind {
    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Sinusoidal => "sinusoidal",
            ActivationKind::Swish => "swish",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(ActivationKind::Tanh),
            "sinusoidal" | "sin" => Ok(ActivationKind::Sinusoidal),
            "swish" => Ok(ActivationKind::Swish),
            other => Err(PincError::InvalidArchitecture(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkArchitecture {
    pub input_dim: usize,
    pub output_dim: usize,
    pub n_layers: usize,
    pub hidden_size: usize,
    pub activation: ActivationKind,
    pub skip_connections: bool,
}

impl NetworkArchitecture {
    pub fn new(
        input_dim: usize,
        n_layers: usize,
        hidden_size: usize,
        activation: ActivationKind,
        skip_connections: bool,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            output_dim: OUTPUT_DIM,
            n_layers,
            hidden_size,
            activation,
            skip_connections,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 2 && self.input_dim != 4 {
            return Err(PincError::InvalidArchitecture(format!(
                "input_dim must be 2 or 4, got {}",
                self.input_dim
            )));
        }
        if self.output_dim != OUTPUT_DIM {
            return Err(PincError::InvalidArchitecture(format!(
                "output_dim must be 2, got {}",
                self.output_dim
            )));
        }
        if self.n_layers == 0 || self.hidden_size == 0 {
            return Err(PincError::InvalidArchitecture(
                "n_layers and hidden_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn is_transient(&self) -> bool {
        self.input_dim == 4
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerId {
    Hidden(usize),
    EncoderU,
    EncoderV,
    Gate(usize),
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    Weight,
    Bias,
    /// The (w1, w2) pair of a sinusoidal activation, stored as one row of two.
    Activation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: LayerId,
    pub role: ParamRole,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Map between (layer, role, row, col) and positions in the flat parameter vector.
///
/// Blocks appear in forward order: weight, bias, then the activation pair if the
/// activation is sinusoidal. Weights are row-major with one row per output unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    len: usize,
}

impl ParamLayout {
    pub fn new(arch: &NetworkArchitecture) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let sinus = arch.activation == ActivationKind::Sinusoidal;
        let mut push = |layer, fan_in: usize, fan_out: usize, activated: bool| {
            for (role, rows, cols) in [
                (ParamRole::Weight, fan_out, fan_in),
                (ParamRole::Bias, 1, fan_out),
            ] {
                blocks.push(ParamBlock { layer, role, rows, cols, offset });
                offset += rows * cols;
            }
            if activated && sinus {
                blocks.push(ParamBlock { layer, role: ParamRole::Activation, rows: 1, cols: 2, offset });
                offset += 2;
            }
        };
        let h = arch.hidden_size;
        if arch.skip_connections {
            push(LayerId::EncoderU, arch.input_dim, h, true);
            push(LayerId::EncoderV, arch.input_dim, h, true);
            for k in 1..=arch.n_layers {
                let fan_in = if k == 1 { arch.input_dim } else { h };
                push(LayerId::Gate(k), fan_in, h, true);
            }
        } else {
            for k in 1..=arch.n_layers {
                let fan_in = if k == 1 { arch.input_dim } else { h };
                push(LayerId::Hidden(k), fan_in, h, true);
            }
        }
        push(LayerId::Output, h, arch.output_dim, false);
        Self { blocks, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, layer: LayerId, role: ParamRole) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.layer == layer && b.role == role)
    }

    pub fn index(&self, layer: LayerId, role: ParamRole, row: usize, col: usize) -> Option<usize> {
        let b = self.block(layer, role)?;
        (row < b.rows && col < b.cols).then(|| b.offset + row * b.cols + col)
    }

    pub fn locate(&self, index: usize) -> Option<(LayerId, ParamRole, usize, usize)> {
        let b = self
            .blocks
            .iter()
            .find(|b| index >= b.offset && index < b.offset + b.len())?;
        let local = index - b.offset;
        Some((b.layer, b.role, local / b.cols, local % b.cols))
    }
}

/// Glorot-uniform weights, zero biases, sinusoidal pairs at (1, 0).
pub fn init_params(arch: &NetworkArchitecture, seed: u64) -> Vec<f64> {
    let layout = ParamLayout::new(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0; layout.len()];
    for b in layout.blocks() {
        match b.role {
            ParamRole::Weight => {
                let bound = (6.0 / (b.rows + b.cols) as f64).sqrt();
                for p in &mut params[b.offset..b.offset + b.len()] {
                    *p = rng.gen_range(-bound..bound);
                }
            }
            ParamRole::Bias => {}
            ParamRole::Activation => params[b.offset] = 1.0,
        }
    }
    params
}

/// Values and input-direction tangents of the two outputs for a chunk of points.
///
/// Row `i` of block 0 holds the outputs at point `i`; block `d + 1` holds the
/// derivatives along the `d`-th requested input direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    m: usize,
    ndirs: usize,
    data: Array2<f64>,
}

impl Jet {
    pub fn zeros(m: usize, ndirs: usize) -> Self {
        Self { m, ndirs, data: Array2::zeros(((1 + ndirs) * m, OUTPUT_DIM)) }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn ndirs(&self) -> usize {
        self.ndirs
    }

    pub fn value(&self, i: usize, o: usize) -> f64 {
        self.data[[i, o]]
    }

    pub fn tangent(&self, d: usize, i: usize, o: usize) -> f64 {
        self.data[[(d + 1) * self.m + i, o]]
    }

    pub fn value_mut(&mut self, i: usize, o: usize) -> &mut f64 {
        &mut self.data[[i, o]]
    }

    pub fn tangent_mut(&mut self, d: usize, i: usize, o: usize) -> &mut f64 {
        &mut self.data[[(d + 1) * self.m + i, o]]
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.data.slice(s![0..self.m, ..])
    }

    /// Concatenate chunk jets point-wise.
    fn concat(parts: Vec<Jet>, ndirs: usize) -> Jet {
        let m: usize = parts.iter().map(|p| p.m).sum();
        let mut out = Jet::zeros(m, ndirs);
        let mut start = 0;
        for p in parts {
            for b in 0..=ndirs {
                out.data
                    .slice_mut(s![b * m + start..b * m + start + p.m, ..])
                    .assign(&p.data.slice(s![b * p.m..(b + 1) * p.m, ..]));
            }
            start += p.m;
        }
        out
    }
}

/// Outputs and the full output-by-input Jacobian at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub outputs: [f64; OUTPUT_DIM],
    pub input_jacobian: Array2<f64>,
}

#[derive(Clone, Copy)]
enum Act {
    Tanh,
    Swish,
    Sin(f64, f64),
}

#[inline]
fn act_eval(act: Act, a: f64) -> (f64, f64, f64) {
    match act {
        Act::Tanh => {
            let t = a.tanh();
            let d1 = 1.0 - t * t;
            (t, d1, -2.0 * t * d1)
        }
        Act::Swish => {
            let s = 1.0 / (1.0 + (-a).exp());
            (a * s, s * (1.0 + a * (1.0 - s)), s * (1.0 - s) * (2.0 + a * (1.0 - 2.0 * s)))
        }
        Act::Sin(w1, w2) => {
            let (sn, cs) = a.sin_cos();
            let f = w1 * sn + w2 * cs;
            (f, w1 * cs - w2 * sn, -f)
        }
    }
}

#[derive(Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
    act: Option<usize>,
}

struct Plan {
    arch: NetworkArchitecture,
    len: usize,
    layers: Vec<Dense>,
}

impl Plan {
    fn new(arch: &NetworkArchitecture) -> Self {
        let layout = ParamLayout::new(arch);
        let mut layers: Vec<Dense> = Vec::new();
        for b in layout.blocks() {
            match b.role {
                ParamRole::Weight => layers.push(Dense {
                    w: b.offset,
                    b: 0,
                    fan_in: b.cols,
                    fan_out: b.rows,
                    act: None,
                }),
                ParamRole::Bias => layers.last_mut().unwrap().b = b.offset,
                ParamRole::Activation => layers.last_mut().unwrap().act = Some(b.offset),
            }
        }
        Self { arch: arch.clone(), len: layout.len(), layers }
    }

    fn act(&self, layer: &Dense, params: &[f64]) -> Act {
        match self.arch.activation {
            ActivationKind::Tanh => Act::Tanh,
            ActivationKind::Swish => Act::Swish,
            ActivationKind::Sinusoidal => {
                let o = layer.act.expect("sinusoidal layer without weights");
                Act::Sin(params[o], params[o + 1])
            }
        }
    }
}

fn weight<'a>(layer: &Dense, params: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((layer.fan_out, layer.fan_in), &params[layer.w..layer.w + layer.fan_out * layer.fan_in])
        .unwrap()
}

fn dense_forward(layer: &Dense, params: &[f64], input: &Array2<f64>, m: usize) -> Array2<f64> {
    let mut p = input.dot(&weight(layer, params).t());
    let bias = ArrayView2::from_shape((1, layer.fan_out), &params[layer.b..layer.b + layer.fan_out]).unwrap();
    let mut head = p.slice_mut(s![0..m, ..]);
    head += &bias;
    p
}

/// Accumulate weight and bias gradients; return the adjoint of the input if asked.
fn dense_backward(
    layer: &Dense,
    params: &[f64],
    grad: &mut [f64],
    input: &Array2<f64>,
    pre_bar: &Array2<f64>,
    m: usize,
    want_input: bool,
) -> Option<Array2<f64>> {
    {
        let mut gw = ArrayViewMut2::from_shape(
            (layer.fan_out, layer.fan_in),
            &mut grad[layer.w..layer.w + layer.fan_out * layer.fan_in],
        )
        .unwrap();
        general_mat_mul(1.0, &pre_bar.t(), input, 1.0, &mut gw);
    }
    let gb = pre_bar.slice(s![0..m, ..]).sum_axis(Axis(0));
    for (g, v) in grad[layer.b..layer.b + layer.fan_out].iter_mut().zip(gb.iter()) {
        *g += v;
    }
    want_input.then(|| pre_bar.dot(&weight(layer, params)))
}

fn act_forward(act: Act, pre: &Array2<f64>, m: usize, nd: usize) -> Array2<f64> {
    let n = pre.ncols();
    let mut out = Array2::zeros(pre.raw_dim());
    let p = pre.as_slice().unwrap();
    let o = out.as_slice_mut().unwrap();
    let blk = m * n;
    for idx in 0..blk {
        let (f, d1, _) = act_eval(act, p[idx]);
        o[idx] = f;
        for d in 1..=nd {
            o[d * blk + idx] = d1 * p[d * blk + idx];
        }
    }
    out
}

/// Adjoint of the pre-activation plus (w1, w2) adjoints for sinusoidal layers.
fn act_backward(act: Act, pre: &Array2<f64>, out_bar: &Array2<f64>, m: usize, nd: usize) -> (Array2<f64>, [f64; 2]) {
    let n = pre.ncols();
    let mut pre_bar = Array2::zeros(pre.raw_dim());
    let p = pre.as_slice().unwrap();
    let ob = out_bar.as_slice().unwrap();
    let pb = pre_bar.as_slice_mut().unwrap();
    let blk = m * n;
    let mut wbar = [0.0; 2];
    for idx in 0..blk {
        let a = p[idx];
        let (_, d1, d2) = act_eval(act, a);
        let mut acc = ob[idx] * d1;
        let mut tang = 0.0;
        for d in 1..=nd {
            let k = d * blk + idx;
            acc += ob[k] * d2 * p[k];
            pb[k] = ob[k] * d1;
            tang += ob[k] * p[k];
        }
        pb[idx] = acc;
        if let Act::Sin(..) = act {
            let (sn, cs) = a.sin_cos();
            wbar[0] += ob[idx] * sn + tang * cs;
            wbar[1] += ob[idx] * cs - tang * sn;
        }
    }
    (pre_bar, wbar)
}

/// A = U + Z ⊙ (V − U), applied to values and tangents.
fn gate_forward(u: &Array2<f64>, v: &Array2<f64>, z: &Array2<f64>, m: usize, nd: usize) -> Array2<f64> {
    let n = u.ncols();
    let blk = m * n;
    let (us, vs, zs) = (u.as_slice().unwrap(), v.as_slice().unwrap(), z.as_slice().unwrap());
    let mut out = Array2::zeros(u.raw_dim());
    let o = out.as_slice_mut().unwrap();
    for idx in 0..blk {
        let diff = vs[idx] - us[idx];
        o[idx] = us[idx] + zs[idx] * diff;
        for d in 1..=nd {
            let k = d * blk + idx;
            o[k] = us[k] + zs[k] * diff + zs[idx] * (vs[k] - us[k]);
        }
    }
    out
}

/// Returns the adjoint of Z and accumulates the adjoints of U and V.
#[allow(clippy::too_many_arguments)]
fn gate_backward(
    u: &Array2<f64>,
    v: &Array2<f64>,
    z: &Array2<f64>,
    a_bar: &Array2<f64>,
    u_bar: &mut Array2<f64>,
    v_bar: &mut Array2<f64>,
    m: usize,
    nd: usize,
) -> Array2<f64> {
    let n = u.ncols();
    let blk = m * n;
    let (us, vs, zs) = (u.as_slice().unwrap(), v.as_slice().unwrap(), z.as_slice().unwrap());
    let ab = a_bar.as_slice().unwrap();
    let ub = u_bar.as_slice_mut().unwrap();
    let vb = v_bar.as_slice_mut().unwrap();
    let mut z_bar = Array2::zeros(u.raw_dim());
    let zb = z_bar.as_slice_mut().unwrap();
    for idx in 0..blk {
        let diff = vs[idx] - us[idx];
        let z0 = zs[idx];
        let mut zacc = ab[idx] * diff;
        let mut cross = 0.0;
        for d in 1..=nd {
            let k = d * blk + idx;
            zacc += ab[k] * (vs[k] - us[k]);
            zb[k] = ab[k] * diff;
            cross += ab[k] * zs[k];
            ub[k] += ab[k] * (1.0 - z0);
            vb[k] += ab[k] * z0;
        }
        zb[idx] = zacc;
        ub[idx] += ab[idx] * (1.0 - z0) - cross;
        vb[idx] += ab[idx] * z0 + cross;
    }
    z_bar
}

fn stacked_input(inputs: ArrayView2<'_, f64>, dirs: &[usize]) -> Array2<f64> {
    let (m, d_in) = inputs.dim();
    let mut s0 = Array2::zeros(((1 + dirs.len()) * m, d_in));
    s0.slice_mut(s![0..m, ..]).assign(&inputs);
    for (d, &dir) in dirs.iter().enumerate() {
        s0.slice_mut(s![(d + 1) * m..(d + 2) * m, dir]).fill(1.0);
    }
    s0
}

enum Cache {
    Plain { inputs: Vec<Array2<f64>>, pres: Vec<Array2<f64>> },
    Skip {
        s0: Array2<f64>,
        pre_u: Array2<f64>,
        u: Array2<f64>,
        pre_v: Array2<f64>,
        v: Array2<f64>,
        gate_pres: Vec<Array2<f64>>,
        gates: Vec<Array2<f64>>,
        mixes: Vec<Array2<f64>>,
    },
}

fn chunk_forward(plan: &Plan, params: &[f64], inputs: ArrayView2<'_, f64>, dirs: &[usize], keep: bool) -> (Jet, Option<Cache>) {
    let m = inputs.nrows();
    let nd = dirs.len();
    let s0 = stacked_input(inputs, dirs);
    let out_layer = plan.layers.last().unwrap();
    let (y, cache) = if plan.arch.skip_connections {
        let (lu, lv) = (&plan.layers[0], &plan.layers[1]);
        let pre_u = dense_forward(lu, params, &s0, m);
        let u = act_forward(plan.act(lu, params), &pre_u, m, nd);
        let pre_v = dense_forward(lv, params, &s0, m);
        let v = act_forward(plan.act(lv, params), &pre_v, m, nd);
        let mut gate_pres = Vec::new();
        let mut gates = Vec::new();
        let mut mixes: Vec<Array2<f64>> = Vec::new();
        for layer in &plan.layers[2..plan.layers.len() - 1] {
            let input = mixes.last().unwrap_or(&s0);
            let pre = dense_forward(layer, params, input, m);
            let z = act_forward(plan.act(layer, params), &pre, m, nd);
            let a = gate_forward(&u, &v, &z, m, nd);
            if keep {
                gate_pres.push(pre);
                gates.push(z);
            }
            if keep || mixes.is_empty() {
                mixes.push(a);
            } else {
                *mixes.last_mut().unwrap() = a;
            }
        }
        let y = dense_forward(out_layer, params, mixes.last().unwrap(), m);
        let cache = keep.then(|| Cache::Skip { s0, pre_u, u, pre_v, v, gate_pres, gates, mixes });
        (y, cache)
    } else {
        let mut inputs_c = Vec::new();
        let mut pres = Vec::new();
        let mut h = s0;
        for layer in &plan.layers[..plan.layers.len() - 1] {
            let pre = dense_forward(layer, params, &h, m);
            let next = act_forward(plan.act(layer, params), &pre, m, nd);
            if keep {
                inputs_c.push(std::mem::replace(&mut h, next));
                pres.push(pre);
            } else {
                h = next;
            }
        }
        let y = dense_forward(out_layer, params, &h, m);
        inputs_c.push(h);
        (y, keep.then_some(Cache::Plain { inputs: inputs_c, pres }))
    };
    (Jet { m, ndirs: nd, data: y }, cache)
}

fn chunk_backward(plan: &Plan, params: &[f64], cache: &Cache, y_bar: &Jet, grad: &mut [f64]) {
    let m = y_bar.m;
    let nd = y_bar.ndirs;
    let n_layers = plan.layers.len();
    let out_layer = &plan.layers[n_layers - 1];
    match cache {
        Cache::Plain { inputs, pres } => {
            let mut h_bar =
                dense_backward(out_layer, params, grad, &inputs[n_layers - 1], &y_bar.data, m, true).unwrap();
            for k in (0..n_layers - 1).rev() {
                let layer = &plan.layers[k];
                let act = plan.act(layer, params);
                let (pre_bar, wbar) = act_backward(act, &pres[k], &h_bar, m, nd);
                if let Some(o) = layer.act {
                    grad[o] += wbar[0];
                    grad[o + 1] += wbar[1];
                }
                match dense_backward(layer, params, grad, &inputs[k], &pre_bar, m, k > 0) {
                    Some(b) => h_bar = b,
                    None => break,
                }
            }
        }
        Cache::Skip { s0, pre_u, u, pre_v, v, gate_pres, gates, mixes } => {
            let n_gates = n_layers - 3;
            let mut a_bar =
                dense_backward(out_layer, params, grad, &mixes[n_gates - 1], &y_bar.data, m, true).unwrap();
            let mut u_bar = Array2::zeros(u.raw_dim());
            let mut v_bar = Array2::zeros(v.raw_dim());
            for k in (0..n_gates).rev() {
                let layer = &plan.layers[2 + k];
                let z_bar = gate_backward(u, v, &gates[k], &a_bar, &mut u_bar, &mut v_bar, m, nd);
                let (pre_bar, wbar) = act_backward(plan.act(layer, params), &gate_pres[k], &z_bar, m, nd);
                if let Some(o) = layer.act {
                    grad[o] += wbar[0];
                    grad[o + 1] += wbar[1];
                }
                let input = if k == 0 { s0 } else { &mixes[k - 1] };
                if let Some(b) = dense_backward(layer, params, grad, input, &pre_bar, m, k > 0) {
                    a_bar = b;
                }
            }
            for (layer, pre, bar) in [(&plan.layers[0], pre_u, &u_bar), (&plan.layers[1], pre_v, &v_bar)] {
                let (pre_bar, wbar) = act_backward(plan.act(layer, params), pre, bar, m, nd);
                if let Some(o) = layer.act {
                    grad[o] += wbar[0];
                    grad[o + 1] += wbar[1];
                }
                dense_backward(layer, params, grad, s0, &pre_bar, m, false);
            }
        }
    }
}

fn check_params(arch: &NetworkArchitecture, params: &[f64]) -> Result<Plan> {
    arch.validate()?;
    let plan = Plan::new(arch);
    if params.len() != plan.len {
        return Err(PincError::DimensionMismatch { expected: plan.len, got: params.len() });
    }
    Ok(plan)
}

fn check_batch(arch: &NetworkArchitecture, inputs: ArrayView2<'_, f64>, dirs: &[usize]) -> Result<()> {
    if inputs.ncols() != arch.input_dim {
        return Err(PincError::DimensionMismatch { expected: arch.input_dim, got: inputs.ncols() });
    }
    if let Some(&d) = dirs.iter().find(|&&d| d >= arch.input_dim) {
        return Err(PincError::DimensionMismatch { expected: arch.input_dim, got: d + 1 });
    }
    Ok(())
}

/// Outputs and directional input derivatives for a batch of points.
pub fn eval_batch(
    arch: &NetworkArchitecture,
    params: &[f64],
    inputs: ArrayView2<'_, f64>,
    dirs: &[usize],
) -> Result<Jet> {
    let plan = check_params(arch, params)?;
    check_batch(arch, inputs, dirs)?;
    let n = inputs.nrows();
    if n <= CHUNK {
        return Ok(chunk_forward(&plan, params, inputs, dirs, false).0);
    }
    let parts: Vec<Jet> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = c * CHUNK..((c + 1) * CHUNK).min(n);
            chunk_forward(&plan, params, inputs.slice(s![rows, ..]), dirs, false).0
        })
        .collect();
    Ok(Jet::concat(parts, dirs.len()))
}

/// Outputs only, one row per input point.
pub fn forward_batch(arch: &NetworkArchitecture, params: &[f64], inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Ok(eval_batch(arch, params, inputs, &[])?.data)
}

fn forward_point(arch: &NetworkArchitecture, params: &[f64], input: &[f64]) -> Result<[f64; OUTPUT_DIM]> {
    if input.len() != arch.input_dim {
        return Err(PincError::DimensionMismatch { expected: arch.input_dim, got: input.len() });
    }
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    let y = forward_batch(arch, params, x)?;
    Ok([y[[0, 0]], y[[0, 1]]])
}

/// Plain dense composition. Fails on skip architectures.
pub fn forward_plain(arch: &NetworkArchitecture, params: &[f64], input: &[f64]) -> Result<[f64; OUTPUT_DIM]> {
    if arch.skip_connections {
        return Err(PincError::InvalidArchitecture("forward_plain called on a skip architecture".into()));
    }
    forward_point(arch, params, input)
}

/// Gated skip composition. Fails on plain architectures.
pub fn forward_skip(arch: &NetworkArchitecture, params: &[f64], input: &[f64]) -> Result<[f64; OUTPUT_DIM]> {
    if !arch.skip_connections {
        return Err(PincError::InvalidArchitecture("forward_skip called on a plain architecture".into()));
    }
    forward_point(arch, params, input)
}

pub fn eval_with_input_derivatives(arch: &NetworkArchitecture, params: &[f64], input: &[f64]) -> Result<EvalResult> {
    if input.len() != arch.input_dim {
        return Err(PincError::DimensionMismatch { expected: arch.input_dim, got: input.len() });
    }
    let dirs: Vec<usize> = (0..arch.input_dim).collect();
    let x = ArrayView2::from_shape((1, input.len()), input).unwrap();
    let jet = eval_batch(arch, params, x, &dirs)?;
    let mut jac = Array2::zeros((OUTPUT_DIM, arch.input_dim));
    for o in 0..OUTPUT_DIM {
        for d in 0..arch.input_dim {
            jac[[o, d]] = jet.tangent(d, 0, o);
        }
    }
    Ok(EvalResult { outputs: [jet.value(0, 0), jet.value(0, 1)], input_jacobian: jac })
}

/// Value and parameter gradient of `Σ_chunks pointwise(start, jet)`.
///
/// `pointwise` receives the jet of a contiguous chunk of points beginning at
/// row `start` of `inputs`, and returns the chunk's contribution to the scalar
/// together with its adjoint (the partial derivatives of that contribution with
/// respect to every value and tangent entry). Chunks are reduced in order, so
/// the result does not depend on the number of worker threads.
pub fn objective_gradient<F>(
    arch: &NetworkArchitecture,
    params: &[f64],
    inputs: ArrayView2<'_, f64>,
    dirs: &[usize],
    pointwise: F,
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, &Jet) -> (f64, Jet) + Sync,
{
    let plan = check_params(arch, params)?;
    check_batch(arch, inputs, dirs)?;
    let n = inputs.nrows();
    let parts: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let rows = start..(start + CHUNK).min(n);
            let (jet, cache) = chunk_forward(&plan, params, inputs.slice(s![rows, ..]), dirs, true);
            let (value, adj) = pointwise(start, &jet);
            assert_eq!(adj.data.dim(), jet.data.dim(), "adjoint jet shape mismatch");
            let mut grad = vec![0.0; plan.len];
            chunk_backward(&plan, params, cache.as_ref().unwrap(), &adj, &mut grad);
            (value, grad)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; plan.len];
    for (v, g) in parts {
        total += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// A network together with the normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub arch: NetworkArchitecture,
    pub params: Vec<f64>,
    pub norm: NormalizationRefs,
}

impl NetworkModel {
    pub fn new(arch: NetworkArchitecture, params: Vec<f64>, norm: NormalizationRefs) -> Result<Self> {
        check_params(&arch, &params)?;
        Ok(Self { arch, params, norm })
    }

    pub fn init(arch: NetworkArchitecture, norm: NormalizationRefs, seed: u64) -> Result<Self> {
        arch.validate()?;
        let params = init_params(&arch, seed);
        Ok(Self { arch, params, norm })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.arch)
    }

    pub fn forward(&self, input: &[f64]) -> Result<[f64; OUTPUT_DIM]> {
        forward_point(&self.arch, &self.params, input)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        forward_batch(&self.arch, &self.params, inputs)
    }

    pub fn eval_batch(&self, inputs: ArrayView2<'_, f64>, dirs: &[usize]) -> Result<Jet> {
        eval_batch(&self.arch, &self.params, inputs, dirs)
    }

    pub fn eval_with_input_derivatives(&self, input: &[f64]) -> Result<EvalResult> {
        eval_with_input_derivatives(&self.arch, &self.params, input)
    }

    pub fn to_document(&self) -> String {
        serialize_model(&self.arch, &self.params, &self.norm)
    }

    pub fn from_document(doc: &str) -> Result<Self> {
        let (arch, params, norm) = deserialize_model(doc)?;
        Ok(Self { arch, params, norm })
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical JSON document: fixed key order, 17 significant digits per float.
pub fn serialize_model(arch: &NetworkArchitecture, params: &[f64], norm: &NormalizationRefs) -> String {
    let mut s = String::new();
    s.push_str("{\n");
    let _ = writeln!(s, "  \"format_version\": {FORMAT_VERSION},");
    s.push_str("  \"architecture\": {\n");
    let _ = writeln!(s, "    \"input_dim\": {},", arch.input_dim);
    let _ = writeln!(s, "    \"output_dim\": {},", arch.output_dim);
    let _ = writeln!(s, "    \"n_layers\": {},", arch.n_layers);
    let _ = writeln!(s, "    \"hidden_size\": {},", arch.hidden_size);
    let _ = writeln!(s, "    \"activation\": \"{}\",", arch.activation.name());
    let _ = writeln!(s, "    \"skip_connections\": {}", arch.skip_connections);
    s.push_str("  },\n");
    s.push_str("  \"normalization\": {\n");
    let _ = writeln!(s, "    \"t_ref\": {},", fmt_f64(norm.t_ref));
    let _ = writeln!(s, "    \"x_ref\": {},", fmt_f64(norm.x_ref));
    let _ = writeln!(s, "    \"P_ref\": {},", fmt_f64(norm.p_ref));
    let _ = writeln!(s, "    \"V_ref\": {},", fmt_f64(norm.v_ref));
    let _ = writeln!(s, "    \"rho_ref\": {}", fmt_f64(norm.rho_ref));
    s.push_str("  },\n");
    s.push_str("  \"parameters\": [");
    for (i, p) in params.iter().enumerate() {
        s.push_str(if i == 0 { "\n    " } else { ",\n    " });
        s.push_str(&fmt_f64(*p));
    }
    s.push_str("\n  ]\n}\n");
    s
}

fn field<'a>(v: &'a serde_json::Value, key: &str) -> Result<&'a serde_json::Value> {
    v.get(key).ok_or_else(|| PincError::MalformedDocument(format!("missing field `{key}`")))
}

fn as_usize(v: &serde_json::Value, key: &str) -> Result<usize> {
    field(v, key)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| PincError::MalformedDocument(format!("`{key}` must be a non-negative integer")))
}

fn as_f64(v: &serde_json::Value, key: &str) -> Result<f64> {
    field(v, key)?
        .as_f64()
        .ok_or_else(|| PincError::MalformedDocument(format!("`{key}` must be a number")))
}

pub fn deserialize_model(doc: &str) -> Result<(NetworkArchitecture, Vec<f64>, NormalizationRefs)> {
    let root: serde_json::Value =
        serde_json::from_str(doc).map_err(|e| PincError::MalformedDocument(e.to_string()))?;
    let version = as_usize(&root, "format_version")? as u64;
    if version != FORMAT_VERSION {
        return Err(PincError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let a = field(&root, "architecture")?;
    let activation = field(a, "activation")?
        .as_str()
        .ok_or_else(|| PincError::MalformedDocument("`activation` must be a string".into()))
        .and_then(ActivationKind::parse)?;
    let skip = field(a, "skip_connections")?
        .as_bool()
        .ok_or_else(|| PincError::MalformedDocument("`skip_connections` must be a boolean".into()))?;
    let arch = NetworkArchitecture {
        input_dim: as_usize(a, "input_dim")?,
        output_dim: as_usize(a, "output_dim")?,
        n_layers: as_usize(a, "n_layers")?,
        hidden_size: as_usize(a, "hidden_size")?,
        activation,
        skip_connections: skip,
    };
    arch.validate()?;
    let n = field(&root, "normalization")?;
    let norm = NormalizationRefs {
        t_ref: as_f64(n, "t_ref")?,
        x_ref: as_f64(n, "x_ref")?,
        p_ref: as_f64(n, "P_ref")?,
        v_ref: as_f64(n, "V_ref")?,
        rho_ref: as_f64(n, "rho_ref")?,
    };
    norm.validate()?;
    let params = field(&root, "parameters")?
        .as_array()
        .ok_or_else(|| PincError::MalformedDocument("`parameters` must be an array".into()))?
        .iter()
        .map(|p| p.as_f64().ok_or_else(|| PincError::MalformedDocument("non-numeric parameter".into())))
        .collect::<Result<Vec<f64>>>()?;
    check_params(&arch, &params)?;
    Ok((arch, params, norm))
}
