//! LSTM with normalization on the input-to-hidden path, and its
//! bidirectional layer.
//!
//! The cell consumes an already-normalized input `x̃_t`:
//!
//! ```text
//! i_t = σ(W_hi h_{t−1} + W_xi x̃_t + b_i)
//! f_t = σ(W_hf h_{t−1} + W_xf x̃_t + b_f)
//! c_t = f_t ⊙ c_{t−1} + i_t ⊙ tanh(W_hc h_{t−1} + W_xc x̃_t + b_c)
//! o_t = σ(W_ho h_{t−1} + W_xo x̃_t + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ tanh(c_t)
//! ```
//!
//! The output-gate peephole `w_co` is diagonal. With zero biases this is
//! exactly the bias-free formulation.

use rand::RngCore;

use crate::batch::BatchLayout;
use crate::error::{Error, Result};
use crate::params::{param_fields, uniform};
use crate::scalar::Scalar;
use crate::tape::Exec;
use crate::tensor::Tensor;

/// Weights of one LSTM direction: recurrent `n×n`, input `n×p`,
/// peephole and biases `[n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayerParams<V> {
    pub w_hi: V,
    pub w_hf: V,
    pub w_hc: V,
    pub w_ho: V,
    pub w_xi: V,
    pub w_xf: V,
    pub w_xc: V,
    pub w_xo: V,
    pub w_co: V,
    pub b_i: V,
    pub b_f: V,
    pub b_c: V,
    pub b_o: V,
}

param_fields!(LstmLayerParams { w_hi, w_hf, w_hc, w_ho, w_xi, w_xf, w_xc, w_xo, w_co, b_i, b_f, b_c, b_o });

impl<T: Scalar> LstmLayerParams<Tensor<T>> {
    /// `U(−1/√n, 1/√n)` weights, zero biases except a forget bias of 1.
    pub fn new(n: usize, p: usize, rng: &mut dyn RngCore) -> Self {
        let k = 1.0 / (n as f64).sqrt();
        Self {
            w_hi: uniform(&[n, n], k, rng),
            w_hf: uniform(&[n, n], k, rng),
            w_hc: uniform(&[n, n], k, rng),
            w_ho: uniform(&[n, n], k, rng),
            w_xi: uniform(&[n, p], k, rng),
            w_xf: uniform(&[n, p], k, rng),
            w_xc: uniform(&[n, p], k, rng),
            w_xo: uniform(&[n, p], k, rng),
            w_co: uniform(&[n], k, rng),
            b_i: Tensor::zeros(&[n]),
            b_f: Tensor::ones(&[n]),
            b_c: Tensor::zeros(&[n]),
            b_o: Tensor::zeros(&[n]),
        }
    }

    pub fn zeros(n: usize, p: usize) -> Self {
        let sq = || Tensor::zeros(&[n, n]);
        let inp = || Tensor::zeros(&[n, p]);
        let vec = || Tensor::zeros(&[n]);
        Self {
            w_hi: sq(),
            w_hf: sq(),
            w_hc: sq(),
            w_ho: sq(),
            w_xi: inp(),
            w_xf: inp(),
            w_xc: inp(),
            w_xo: inp(),
            w_co: vec(),
            b_i: vec(),
            b_f: vec(),
            b_c: vec(),
            b_o: vec(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hi.rows()
    }

    pub fn input(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.hidden();
        let p = self.input();
        let mut bad = None;
        self.visit("", &mut |name, t| {
            let expected: &[usize] = match name.as_str() {
                "w_hi" | "w_hf" | "w_hc" | "w_ho" => &[n, n],
                "w_xi" | "w_xf" | "w_xc" | "w_xo" => &[n, p],
                _ => &[n],
            };
            if t.shape() != expected && bad.is_none() {
                bad = Some((name, t.shape().to_vec(), expected.to_vec()));
            }
        });
        match bad {
            None => Ok(()),
            Some((name, got, want)) => Err(Error::Contract(format!(
                "lstm parameter {name} has shape {got:?}, expected {want:?}"
            ))),
        }
    }
}

/// Hidden and cell state, each `B×n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<V> {
    pub h: V,
    pub c: V,
}

impl<T: Scalar> LstmState<Tensor<T>> {
    pub fn zeros(batch: usize, n: usize) -> Self {
        Self {
            h: Tensor::zeros(&[batch, n]),
            c: Tensor::zeros(&[batch, n]),
        }
    }
}

/// Input contributions `W_x· x̃ + b·` for the four gates (i, f, c, o).
struct GateInputs<V> {
    i: V,
    f: V,
    c: V,
    o: V,
}

fn gate_inputs<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    params: &LstmLayerParams<E::Value>,
) -> Result<GateInputs<E::Value>> {
    Ok(GateInputs {
        i: exec.linear(x, &params.w_xi, Some(&params.b_i))?,
        f: exec.linear(x, &params.w_xf, Some(&params.b_f))?,
        c: exec.linear(x, &params.w_xc, Some(&params.b_c))?,
        o: exec.linear(x, &params.w_xo, Some(&params.b_o))?,
    })
}

fn cell<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    zx: &GateInputs<E::Value>,
    prev: &LstmState<E::Value>,
    params: &LstmLayerParams<E::Value>,
) -> Result<LstmState<E::Value>> {
    let gate = |exec: &mut E, zx: &E::Value, w_h: &E::Value| -> Result<E::Value> {
        let zh = exec.matmul_t(&prev.h, w_h)?;
        exec.add(zx, &zh)
    };
    let zi = gate(exec, &zx.i, &params.w_hi)?;
    let zf = gate(exec, &zx.f, &params.w_hf)?;
    let zc = gate(exec, &zx.c, &params.w_hc)?;
    let zo = gate(exec, &zx.o, &params.w_ho)?;

    let i = exec.sigmoid(&zi);
    let f = exec.sigmoid(&zf);
    let g = exec.tanh(&zc);
    let keep = exec.mul(&f, &prev.c)?;
    let write = exec.mul(&i, &g)?;
    let c = exec.add(&keep, &write)?;

    let rows = exec.value(&c).rows();
    let peep = exec.broadcast_rows(&params.w_co, rows)?;
    let peep = exec.mul(&peep, &c)?;
    let zo = exec.add(&zo, &peep)?;
    let o = exec.sigmoid(&zo);
    let tc = exec.tanh(&c);
    let h = exec.mul(&o, &tc)?;
    Ok(LstmState { h, c })
}

/// One time step for a `B×p` block of normalized inputs.
pub fn lstm_step<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x_norm: &E::Value,
    prev: &LstmState<E::Value>,
    params: &LstmLayerParams<E::Value>,
) -> Result<LstmState<E::Value>> {
    let zx = gate_inputs(exec, x_norm, params)?;
    cell(exec, &zx, prev, params)
}

/// Runs one direction; returns per-frame outputs `B×n` indexed by time,
/// zero on padded frames.
fn run_direction<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    layout: &BatchLayout,
    params: &LstmLayerParams<E::Value>,
    reverse: bool,
) -> Result<Vec<E::Value>> {
    let n = exec.value(&params.w_hi).rows();
    let batch = layout.batch_size();
    let frames = layout.frames();
    let zx = gate_inputs(exec, x, params)?;

    let zeros = exec.constant(Tensor::zeros(&[batch, n]));
    let mut state = LstmState {
        h: zeros.clone(),
        c: zeros,
    };
    let mut outputs: Vec<Option<E::Value>> = vec![None; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let rows: Vec<usize> = (0..batch).map(|b| b * frames + t).collect();
        let step_in = GateInputs {
            i: exec.gather_rows(&zx.i, &rows)?,
            f: exec.gather_rows(&zx.f, &rows)?,
            c: exec.gather_rows(&zx.c, &rows)?,
            o: exec.gather_rows(&zx.o, &rows)?,
        };
        let next = cell(exec, &step_in, &state, params)?;

        let lengths = layout.lengths();
        if lengths.iter().all(|&l| t < l) {
            outputs[t] = Some(next.h.clone());
            state = next;
            continue;
        }
        // Padded utterances emit zeros and keep their previous state, so
        // the reverse pass starts from zero state at each utterance's end.
        let mut keep = Vec::with_capacity(batch * n);
        let mut hold = Vec::with_capacity(batch * n);
        for &len in lengths {
            let (k, h) = if t < len { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
            keep.extend(std::iter::repeat_n(k, n));
            hold.extend(std::iter::repeat_n(h, n));
        }
        let keep = exec.constant(Tensor::new(vec![batch, n], keep)?);
        let hold = exec.constant(Tensor::new(vec![batch, n], hold)?);
        let out = exec.mul(&next.h, &keep)?;
        let h_prev = exec.mul(&state.h, &hold)?;
        let h = exec.add(&out, &h_prev)?;
        let c_new = exec.mul(&next.c, &keep)?;
        let c_prev = exec.mul(&state.c, &hold)?;
        let c = exec.add(&c_new, &c_prev)?;
        outputs[t] = Some(out);
        state = LstmState { h, c };
    }
    Ok(outputs.into_iter().map(|o| o.expect("every frame visited")).collect())
}

/// Bidirectional layer over a normalized `R×p` batch. Returns `R×2n`:
/// forward outputs then backward outputs per frame, zero on padding.
pub fn bilstm_layer<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    x: &E::Value,
    layout: &BatchLayout,
    forward: &LstmLayerParams<E::Value>,
    backward: &LstmLayerParams<E::Value>,
) -> Result<E::Value> {
    let fwd = run_direction(exec, x, layout, forward, false)?;
    let bwd = run_direction(exec, x, layout, backward, true)?;
    let mut per_time = Vec::with_capacity(fwd.len());
    for (f, b) in fwd.iter().zip(&bwd) {
        per_time.push(exec.concat_cols(&[f.clone(), b.clone()])?);
    }
    // Rows come out time-major (t·B + b); reorder to batch-major (b·T + t).
    let time_major = exec.concat_rows(&per_time)?;
    let batch = layout.batch_size();
    let frames = layout.frames();
    let order: Vec<usize> = (0..batch)
        .flat_map(|b| (0..frames).map(move |t| t * batch + b))
        .collect();
    exec.gather_rows(&time_major, &order)
}
