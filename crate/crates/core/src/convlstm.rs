//! Convolutional LSTM cell and layer.
//!
//! The cell is the standard ConvLSTM update with the four gate transforms
//! computed by convolutions:
//!
//! ```text
//! i  = sigmoid(Wxi * x + Whi * h + bi)
//! f  = sigmoid(Wxf * x + Whf * h + bf)
//! g  = tanh   (Wxg * x + Whg * h + bg)
//! c' = f . c + i . g
//! o  = sigmoid(Wxo * x + Who * h + bo)
//! h' = o . tanh(c')
//! ```
//!
//! The input-to-hidden convolution uses the layer's stride; the
//! hidden-to-hidden convolution is always stride 1 with same padding so the
//! state keeps its spatial size. With peephole connections enabled, `i` and
//! `f` also see `pi . c` / `pf . c` and `o` sees `po . c'`, with one weight
//! per channel.
//!
//! The four gate kernels are stored stacked along the output-channel axis in
//! the order input, forget, output, candidate.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, Padding};
use crate::tensor::{Shape, Tensor};

/// Stacking order of the gates in every parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Output = 2,
    Candidate = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvLstmSpec {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub peephole: bool,
}

impl ConvLstmSpec {
    pub fn new(in_channels: usize, hidden_channels: usize, kernel: usize, stride: usize) -> Self {
        ConvLstmSpec {
            in_channels,
            hidden_channels,
            kernel,
            stride,
            peephole: false,
        }
    }

    /// Input-to-hidden convolution for all four gates at once.
    pub fn input_conv(&self) -> ConvSpec {
        ConvSpec::square(
            self.kernel,
            self.stride,
            Padding::Same,
            self.in_channels,
            4 * self.hidden_channels,
        )
    }

    /// Hidden-to-hidden convolution for all four gates at once.
    pub fn hidden_conv(&self) -> ConvSpec {
        ConvSpec::square(
            self.kernel,
            1,
            Padding::Same,
            self.hidden_channels,
            4 * self.hidden_channels,
        )
    }

    /// State shape produced for an input of shape `input`.
    pub fn state_shape(&self, input: Shape) -> Result<Shape> {
        let g = self.input_conv().geometry(input.height, input.width)?;
        Ok(Shape::new(input.batch, self.hidden_channels, g.out_h, g.out_w))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config(format!("degenerate ConvLSTM spec {self:?}")));
        }
        Ok(())
    }
}

/// Parameter tensors of one ConvLSTM layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams {
    pub spec: ConvLstmSpec,
    /// `(4H, in, k, k)`
    pub w_x: Tensor,
    /// `(4H, H, k, k)`
    pub w_h: Tensor,
    /// `(1, 4H, 1, 1)`
    pub bias: Tensor,
    /// `(1, 3H, 1, 1)`, peephole weights for input, forget, output gates.
    pub peephole: Option<Tensor>,
}

/// Variance gain for gate kernels. Saturating gates shrink the signal at
/// every layer; with a gain of 1 a stack of a dozen cells leaves the decoder
/// output near 1e-7 and gradients below Adam's epsilon.
pub const LSTM_INIT_GAIN: f64 = 24.0;

impl ConvLstmParams {
    /// Kernels uniform in `+-sqrt(LSTM_INIT_GAIN / fan_in)`, biases zero
    /// except the forget gate which starts at 1.
    pub fn init<R: Rng + ?Sized>(spec: ConvLstmSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let h = spec.hidden_channels;
        let k2 = spec.kernel * spec.kernel;
        let bx = (LSTM_INIT_GAIN / (spec.in_channels * k2) as f64).sqrt();
        let bh = (LSTM_INIT_GAIN / (h * k2) as f64).sqrt();
        let w_x = Tensor::uniform(spec.input_conv().weight_shape(), -bx, bx, rng);
        let w_h = Tensor::uniform(spec.hidden_conv().weight_shape(), -bh, bh, rng);
        let mut bias = Tensor::zeros([1, 4 * h, 1, 1]);
        let f = Gate::Forget as usize;
        bias.data_mut()[f * h..(f + 1) * h].fill(1.0);
        let peephole = spec.peephole.then(|| Tensor::zeros([1, 3 * h, 1, 1]));
        Ok(ConvLstmParams {
            spec,
            w_x,
            w_h,
            bias,
            peephole,
        })
    }

    /// All-zero parameters.
    pub fn zeros(spec: ConvLstmSpec) -> Self {
        let h = spec.hidden_channels;
        ConvLstmParams {
            spec,
            w_x: Tensor::zeros(spec.input_conv().weight_shape()),
            w_h: Tensor::zeros(spec.hidden_conv().weight_shape()),
            bias: Tensor::zeros([1, 4 * h, 1, 1]),
            peephole: spec.peephole.then(|| Tensor::zeros([1, 3 * h, 1, 1])),
        }
    }

    /// Records the parameters on a graph, as trainable values when
    /// `trainable` is set and as constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LstmVars {
        let mut put = |t: &Tensor| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        LstmVars {
            spec: self.spec,
            w_x: put(&self.w_x),
            w_h: put(&self.w_h),
            bias: put(&self.bias),
            peephole: self.peephole.as_ref().map(put),
        }
    }
}

/// Hidden and cell state, always of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl ConvLstmState {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        ConvLstmState {
            hidden: Tensor::zeros(shape),
            cell: Tensor::zeros(shape),
        }
    }
}

/// Graph handles of a layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub spec: ConvLstmSpec,
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub peephole: Option<Var>,
}

/// Graph handles of a recurrent state.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub hidden: Var,
    pub cell: Var,
}

/// Output of one recorded cell step.
#[derive(Clone, Copy, Debug)]
pub struct CellVars {
    pub state: StateVars,
    /// Activated gates, indexed by [`Gate`].
    pub gates: [Var; 4],
}

/// Records one cell update. `state = None` stands for the all-zero initial
/// state, in which case the hidden-to-hidden convolution is skipped.
pub fn cell_step_vars(g: &mut Graph, x: Var, state: Option<StateVars>, p: &LstmVars) -> Result<CellVars> {
    let spec = p.spec;
    let h = spec.hidden_channels;
    let xs = g.shape(x);
    if xs.channels != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "convlstm cell",
            dim: "input channels",
            got: xs.channels,
            expected: spec.in_channels,
        });
    }
    let state_shape = spec.state_shape(xs)?;
    if let Some(s) = state {
        let (hs, cs) = (g.shape(s.hidden), g.shape(s.cell));
        if hs != cs {
            return Err(Error::shape("convlstm cell", format!("hidden {hs:?} and cell {cs:?} differ")));
        }
        g.value(s.hidden).expect_shape(state_shape, "convlstm state")?;
    }

    let mut pre = g.conv2d(x, p.w_x, p.bias, spec.input_conv())?;
    if let Some(s) = state {
        let zero_bias = g.constant(Tensor::zeros([1, 4 * h, 1, 1]));
        let rec = g.conv2d(s.hidden, p.w_h, zero_bias, spec.hidden_conv())?;
        pre = g.add(pre, rec)?;
    }

    let gate_pre = |g: &mut Graph, gate: Gate| g.slice_channels(pre, gate as usize * h, h);
    let mut zi = gate_pre(g, Gate::Input)?;
    let mut zf = gate_pre(g, Gate::Forget)?;
    let mut zo = gate_pre(g, Gate::Output)?;
    let zg = gate_pre(g, Gate::Candidate)?;

    let peep = match p.peephole {
        Some(w) => Some([
            g.slice_channels(w, 0, h)?,
            g.slice_channels(w, h, h)?,
            g.slice_channels(w, 2 * h, h)?,
        ]),
        None => None,
    };
    if let (Some(s), Some([pi, pf, _])) = (state, peep) {
        let ti = g.channel_scale(s.cell, pi)?;
        zi = g.add(zi, ti)?;
        let tf = g.channel_scale(s.cell, pf)?;
        zf = g.add(zf, tf)?;
    }

    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let fresh = g.mul(i, cand)?;
    let cell = match state {
        Some(s) => {
            let kept = g.mul(f, s.cell)?;
            g.add(kept, fresh)?
        }
        None => fresh,
    };
    if let Some([_, _, po]) = peep {
        let to = g.channel_scale(cell, po)?;
        zo = g.add(zo, to)?;
    }
    let o = g.sigmoid(zo);
    let squashed = g.tanh(cell);
    let hidden = g.mul(o, squashed)?;
    Ok(CellVars {
        state: StateVars { hidden, cell },
        gates: [i, f, o, cand],
    })
}

/// Records a layer unrolled for `steps` steps from the zero state, feeding
/// the same input at every step. Returns the final hidden state.
pub fn layer_forward_vars(g: &mut Graph, x: Var, p: &LstmVars, steps: usize) -> Result<Var> {
    if steps == 0 {
        return Err(Error::Config("ConvLSTM layer needs at least one step".into()));
    }
    let mut state = None;
    for _ in 0..steps {
        state = Some(cell_step_vars(g, x, state, p)?.state);
    }
    Ok(state.expect("steps >= 1").hidden)
}

/// One cell update on concrete tensors.
pub fn cell_step(x: &Tensor, state: &ConvLstmState, params: &ConvLstmParams) -> Result<ConvLstmState> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let s = StateVars {
        hidden: g.constant(state.hidden.clone()),
        cell: g.constant(state.cell.clone()),
    };
    let out = cell_step_vars(&mut g, xv, Some(s), &p)?;
    Ok(ConvLstmState {
        hidden: g.value(out.state.hidden).clone(),
        cell: g.value(out.state.cell).clone(),
    })
}

/// Unrolled layer on concrete tensors; see [`layer_forward_vars`].
pub fn layer_forward(x: &Tensor, params: &ConvLstmParams, steps: usize) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let h = layer_forward_vars(&mut g, xv, &p, steps)?;
    Ok(g.value(h).clone())
}
