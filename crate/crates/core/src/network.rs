//! Highway network that learns the continuation value.
//!
//! ```text
//! X¹      = tanh(W¹x + b¹)
//! Zˡ      = tanh(U^{z,l}x + W^{z,l}Xˡ + b^{z,l})
//! Gˡ      = tanh(U^{g,l}x + W^{g,l}Xˡ + b^{g,l})
//! Rˡ      = tanh(U^{r,l}x + W^{r,l}Xˡ + b^{r,l})
//! Hˡ      = tanh(U^{h,l}x + W^{h,l}(Xˡ ⊙ Rˡ) + b^{h,l})
//! Xˡ⁺¹    = (1 − Gˡ) ⊙ Hˡ + Zˡ ⊙ Xˡ
//! f(x; θ) = Ψ(x) + softplus(W X^{L+1} + b)
//! ```
//!
//! All gates of a layer read the same `Xˡ`. The softplus head keeps the
//! price strictly above the payoff.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softplus, Jet, JetFunction, JetOrder, Tape, Var};
use crate::error::{Error, Result};
use crate::sampling::Payoff;

const TENSORS_PER_LAYER: usize = 12;
const MAGIC: &[u8; 8] = b"TDGFNET\0";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_width: usize,
    pub hidden_width: usize,
    pub layers: usize,
}

impl Architecture {
    pub fn new(input_width: usize, hidden_width: usize, layers: usize) -> Self {
        Architecture {
            input_width,
            hidden_width,
            layers,
        }
    }

    /// `h·n + h + L·4·(h·n + h² + h) + h + 1`
    pub fn param_count(&self) -> usize {
        let (n, h, l) = (self.input_width, self.hidden_width, self.layers);
        h * n + h + l * 4 * (h * n + h * h + h) + h + 1
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let (n, h) = (self.input_width, self.hidden_width);
        let mut s = vec![(h, n), (1, h)];
        for _ in 0..self.layers {
            for _ in 0..4 {
                s.extend([(h, n), (h, h), (1, h)]);
            }
        }
        s.extend([(1, h), (1, 1)]);
        s
    }
}

/// Gate weights `(U, W, b)` for one gate of one layer.
#[derive(Debug, Clone, Copy)]
pub struct GateIdx {
    pub u: usize,
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    Z = 0,
    G = 1,
    R = 2,
    H = 3,
}

/// All trainable tensors, in a fixed canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    arch: Architecture,
    tensors: Vec<Array2<f64>>,
}

fn gate_idx(layer: usize, gate: Gate) -> GateIdx {
    let base = 2 + layer * TENSORS_PER_LAYER + 3 * gate as usize;
    GateIdx {
        u: base,
        w: base + 1,
        b: base + 2,
    }
}

fn tanh_affine(
    x: &Array2<f64>,
    u: &Array2<f64>,
    h: &Array2<f64>,
    w: &Array2<f64>,
    b: &Array2<f64>,
) -> Array2<f64> {
    let mut z = x.dot(&u.t()) + h.dot(&w.t());
    z += b;
    z.mapv_inplace(f64::tanh);
    z
}

impl NetParams {
    /// Weights and biases uniform on `±1/√fan_in`, where a gate's fan-in
    /// counts both its input and state columns.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.input_width == 0 {
            return Err(Error::invalid("input_width", "must be positive"));
        }
        if arch.hidden_width == 0 {
            return Err(Error::invalid("hidden_width", "must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.shapes();
        let out_w = 2 + arch.layers * TENSORS_PER_LAYER;
        let tensors = shapes
            .iter()
            .enumerate()
            .map(|(i, &(rows, cols))| {
                let fan_in = if !is_bias_index(i, &arch) {
                    cols
                } else if i == 1 || i == out_w + 1 {
                    shapes[i - 1].1
                } else {
                    shapes[i - 1].1 + shapes[i - 2].1
                };
                let a = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
            })
            .collect();
        Ok(NetParams { arch, tensors })
    }

    /// Parameters from raw tensors in canonical order.
    pub fn from_tensors(arch: Architecture, tensors: Vec<Array2<f64>>) -> Result<Self> {
        let shapes = arch.shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.len(),
                actual: tensors.len(),
            });
        }
        for (t, s) in tensors.iter().zip(&shapes) {
            if t.dim() != *s {
                return Err(Error::DimensionMismatch {
                    expected: s.0 * s.1,
                    actual: t.len(),
                });
            }
        }
        if tensors.iter().flat_map(|t| t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "network parameters".into(),
            });
        }
        Ok(NetParams { arch, tensors })
    }

    /// All-zero parameters.
    pub fn zeros(arch: Architecture) -> Self {
        NetParams {
            arch,
            tensors: arch.shapes().into_iter().map(Array2::zeros).collect(),
        }
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn first_layer(&self) -> (usize, usize) {
        (0, 1)
    }

    pub fn gate(&self, layer: usize, gate: char) -> GateIdx {
        let g = match gate {
            'z' => Gate::Z,
            'g' => Gate::G,
            'r' => Gate::R,
            'h' => Gate::H,
            _ => panic!("unknown gate {gate}"),
        };
        gate_idx(layer, g)
    }

    pub fn output_weight_index(&self) -> usize {
        2 + self.arch.layers * TENSORS_PER_LAYER
    }

    pub fn output_bias_index(&self) -> usize {
        self.output_weight_index() + 1
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_width {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_width,
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Pre-softplus head `W X^{L+1} + b` for every row of `x`.
    fn head(&self, x: &Array2<f64>) -> Array1<f64> {
        let t = &self.tensors;
        let mut s = x.dot(&t[0].t());
        s += &t[1];
        s.mapv_inplace(f64::tanh);
        for l in 0..self.arch.layers {
            let gz = gate_idx(l, Gate::Z);
            let gg = gate_idx(l, Gate::G);
            let gr = gate_idx(l, Gate::R);
            let gh = gate_idx(l, Gate::H);
            let z = tanh_affine(x, &t[gz.u], &s, &t[gz.w], &t[gz.b]);
            let g = tanh_affine(x, &t[gg.u], &s, &t[gg.w], &t[gg.b]);
            let r = tanh_affine(x, &t[gr.u], &s, &t[gr.w], &t[gr.b]);
            let sr = &s * &r;
            let h = tanh_affine(x, &t[gh.u], &sr, &t[gh.w], &t[gh.b]);
            let next = Zip::from(&g)
                .and(&h)
                .and(&z)
                .and(&s)
                .map_collect(|&g, &h, &z, &s| (1.0 - g) * h + z * s);
            s = next;
        }
        let out = s.dot(&self.tensors[self.output_weight_index()].t());
        let b = self.tensors[self.output_bias_index()][[0, 0]];
        out.column(0).mapv(|v| v + b)
    }

    /// Continuation value `softplus(head)` for every row of `x`.
    pub fn continuation_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let c = self.head(x).mapv(softplus);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "network forward".into(),
            });
        }
        Ok(c)
    }

    /// Price `Ψ(x) + softplus(head)` for every row of `x`.
    pub fn forward_batch(&self, x: &Array2<f64>, payoff: &Payoff) -> Result<Array1<f64>> {
        let c = self.continuation_batch(x)?;
        let psi = payoff.values(x)?;
        Ok(psi + c)
    }

    pub fn forward(&self, x: &[f64], payoff: &Payoff) -> Result<f64> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.forward_batch(&row, payoff)?[0])
    }

    pub fn continuation_value(&self, x: &[f64]) -> Result<f64> {
        let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        Ok(self.continuation_batch(&row)?[0])
    }

    /// Register every tensor on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Register every tensor on `tape` as a constant.
    pub fn register_constant(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Raw output `W X^{L+1} + b` for every row of `x`.
    pub fn head_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_input(x)?;
        let h = self.head(x);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "network forward".into(),
            });
        }
        Ok(h)
    }

    /// Jet of the continuation head `softplus(W X^{L+1} + b)`.
    pub fn continuation_jet(&self, tape: &mut Tape, vars: &[Var], input: &Jet) -> Jet {
        let head = self.head_jet(tape, vars, input);
        Jet::softplus(tape, &head)
    }

    /// Jet of the raw output `W X^{L+1} + b`.
    pub fn head_jet(&self, tape: &mut Tape, vars: &[Var], input: &Jet) -> Jet {
        let mut s = Jet::affine(tape, &[(input, vars[0])], Some(vars[1]));
        s = Jet::tanh(tape, &s);
        for l in 0..self.arch.layers {
            let gate = |tape: &mut Tape, which: Gate, state: &Jet| {
                let g = gate_idx(l, which);
                let a = Jet::affine(tape, &[(input, vars[g.u]), (state, vars[g.w])], Some(vars[g.b]));
                Jet::tanh(tape, &a)
            };
            let z = gate(tape, Gate::Z, &s);
            let g = gate(tape, Gate::G, &s);
            let r = gate(tape, Gate::R, &s);
            let sr = Jet::mul(tape, &s, &r);
            let h = gate(tape, Gate::H, &sr);
            let keep = Jet::one_minus(tape, &g);
            let a = Jet::mul(tape, &keep, &h);
            let b = Jet::mul(tape, &z, &s);
            s = Jet::add(tape, &a, &b);
        }
        Jet::affine(
            tape,
            &[(&s, vars[self.output_weight_index()])],
            Some(vars[self.output_bias_index()]),
        )
    }

    /// Jet of the price `Ψ + softplus(head)`.
    pub fn price_jet(&self, tape: &mut Tape, vars: &[Var], input: &Jet, payoff: &Payoff) -> Jet {
        let cont = self.continuation_jet(tape, vars, input);
        let psi = payoff_jet(tape, input, payoff);
        Jet::add(tape, &psi, &cont)
    }

    /// Bind a payoff to evaluate the price as a [`JetFunction`].
    pub fn with_payoff<'a>(&'a self, payoff: &'a Payoff) -> PricedNet<'a> {
        PricedNet { net: self, payoff }
    }
}

fn is_bias_index(i: usize, arch: &Architecture) -> bool {
    let out_w = 2 + arch.layers * TENSORS_PER_LAYER;
    i == 1 || i == out_w + 1 || (i >= 2 && i < out_w && (i - 2) % 3 == 2)
}

/// Constant jet of the payoff on the batch carried by `input`.
pub fn payoff_jet(tape: &mut Tape, input: &Jet, payoff: &Payoff) -> Jet {
    let x = tape.value(input.value).clone();
    let rows = x.nrows();
    let width = x.ncols();
    let mut value = Array2::zeros((rows, 1));
    let mut grads = Array2::zeros((rows, width));
    for (i, r) in x.rows().into_iter().enumerate() {
        let r = r.to_vec();
        value[[i, 0]] = payoff.value(&r);
        let g = payoff.gradient(&r, width);
        grads.row_mut(i).assign(&Array1::from(g));
    }
    let first = (0..input.order.first)
        .map(|k| (k < payoff.assets()).then(|| grads.column(k).to_owned().insert_axis(ndarray::Axis(1))))
        .collect();
    let order = input.order;
    Jet::constant(tape, value, first, vec![None; order.pair_count()], order)
}

/// A network paired with the payoff it prices.
#[derive(Debug, Clone, Copy)]
pub struct PricedNet<'a> {
    pub net: &'a NetParams,
    pub payoff: &'a Payoff,
}

impl JetFunction for PricedNet<'_> {
    fn input_width(&self) -> usize {
        self.net.arch.input_width
    }

    fn eval_jet(&self, tape: &mut Tape, input: &Jet) -> Result<Jet> {
        let vars = self.net.register_constant(tape);
        Ok(self.net.price_jet(tape, &vars, input, self.payoff))
    }
}

/// Self-describing metadata stored with a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Time-step index `k` (0 for the payoff fit, or for a space-time net).
    pub step: usize,
    pub seed: u64,
    pub model_hash: String,
    /// Number of state coordinates; the input width adds one when the
    /// network also takes time.
    pub state_dim: usize,
    pub method: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    architecture: Architecture,
    param_count: usize,
    meta: CheckpointMeta,
}

/// Write `params` as a JSON header followed by little-endian `f64` values.
pub fn save_checkpoint(params: &NetParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let header = Header {
        format: "tdgf-network".into(),
        version: FORMAT_VERSION,
        architecture: params.arch,
        param_count: params.param_count(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &params.tensors {
        for v in t.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetParams, CheckpointMeta)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.architecture.param_count() != header.param_count {
        return Err(Error::Checkpoint("parameter count disagrees with architecture".into()));
    }
    let mut tensors = Vec::new();
    for (rows, cols) in header.architecture.shapes() {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            r.read_exact(&mut b8)
                .map_err(|_| Error::Checkpoint("truncated parameter data".into()))?;
            data.push(f64::from_le_bytes(b8));
        }
        tensors.push(Array2::from_shape_vec((rows, cols), data).expect("sized"));
    }
    if r.read(&mut b8)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    let params = NetParams::from_tensors(header.architecture, tensors)?;
    Ok((params, header.meta))
}

/// Load and check that the network takes `input_width` inputs.
pub fn load_checkpoint_expecting(path: &Path, input_width: usize) -> Result<(NetParams, CheckpointMeta)> {
    let (p, m) = load_checkpoint(path)?;
    if p.arch.input_width != input_width {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: checkpoint input width {} but {} expected",
            p.arch.input_width, input_width
        )));
    }
    Ok((p, m))
}

/// Evaluate the price jet of `net` on `x` with the given derivative order,
/// without parameter gradients.
pub fn price_jet_batch(net: &NetParams, payoff: &Payoff, x: &Array2<f64>, order: JetOrder) -> (Tape, Jet) {
    let mut tape = Tape::new();
    let vars = net.register_constant(&mut tape);
    let input = Jet::input(&mut tape, x, order);
    let jet = net.price_jet(&mut tape, &vars, &input, payoff);
    (tape, jet)
}
