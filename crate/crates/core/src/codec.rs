//! The compression network: encoder, bottleneck and decoder.
//!
//! Encoder:
//!
//! 1. Two front branches on the `N x N` input: a 3x3 stride-2 convolution,
//!    and a 2x2 max pool followed by a 1x1 convolution. Both produce
//!    `front_width` channels at `N/2`, pass through ReLU and are averaged.
//! 2. Three ConvLSTM layers, 3x3 kernels, stride 2, halving the spatial size
//!    each time (`N/16` after the third).
//! 3. A 1x1 bottleneck convolution to `beta` channels, followed by ReLU.
//!
//! Decoder:
//!
//! 1. A 1x1 convolution to `decoder_width` channels, followed by ReLU.
//! 2. Four upsampling modules. Each feeds its input to two parallel ConvLSTM
//!    branches (2x2 kernels, stride 1, hidden width equal to the input
//!    width), averages them, and applies depth-to-space with block 2, so the
//!    width drops by 4 and the spatial size doubles.
//! 3. A final 1x1 convolution to a single channel with identity activation.
//!
//! The latent is `(batch, beta, N/16, N/16)`, which at 8 bits per code gives
//! the nominal compression ratio `N^2 / ((N/16)^2 * beta) = 256 / beta`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::convlstm::{layer_forward_vars, ConvLstmParams, ConvLstmSpec, LstmVars};
use crate::error::{Error, Result};
use crate::ops::{ConvSpec, Padding};
use crate::params::{ParamId, ParamSet};
use crate::tensor::{Shape, Tensor};

/// Total spatial downsampling of the encoder.
pub const DOWNSAMPLE: usize = 16;

/// Number of depth-to-space upsampling modules in the decoder.
pub const DECODER_MODULES: usize = 4;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecConfig {
    /// Side `N` of the square patches the model is trained on.
    pub patch_size: usize,
    /// Latent channels; nominal ratio is `256 / beta`.
    pub beta: usize,
    pub front_width: usize,
    pub rnn_widths: [usize; 3],
    pub decoder_width: usize,
    /// Recurrence steps per ConvLSTM layer.
    pub steps: usize,
    pub quantizer_bits: u8,
    pub peephole: bool,
}

impl CodecConfig {
    /// Small widths that train on a CPU in minutes.
    pub fn desk(patch_size: usize, beta: usize) -> Self {
        CodecConfig {
            patch_size,
            beta,
            front_width: 8,
            rnn_widths: [16, 16, 16],
            decoder_width: 256,
            steps: 2,
            quantizer_bits: 8,
            peephole: false,
        }
    }

    /// Full-size widths (512-channel decoder).
    pub fn paper(patch_size: usize, beta: usize) -> Self {
        CodecConfig {
            front_width: 64,
            rnn_widths: [128, 256, 512],
            decoder_width: 512,
            ..CodecConfig::desk(patch_size, beta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.patch_size % DOWNSAMPLE != 0 {
            return fail(format!("patch size {} is not a positive multiple of 16", self.patch_size));
        }
        if !(1..=256).contains(&self.beta) {
            return fail(format!("beta {} outside 1..=256", self.beta));
        }
        let up = 1usize << (2 * DECODER_MODULES);
        if self.decoder_width == 0 || self.decoder_width % up != 0 {
            return fail(format!("decoder width {} is not a positive multiple of {up}", self.decoder_width));
        }
        if self.front_width == 0 || self.rnn_widths.contains(&0) {
            return fail("layer widths must be >= 1".into());
        }
        if self.steps == 0 {
            return fail("steps must be >= 1".into());
        }
        if !(1..=16).contains(&self.quantizer_bits) {
            return fail(format!("quantizer bits {} outside 1..=16", self.quantizer_bits));
        }
        Ok(())
    }

    /// Latent side `N / 16`.
    pub fn latent_side(&self) -> usize {
        self.patch_size / DOWNSAMPLE
    }

    pub fn image_shape(&self, batch: usize) -> Shape {
        Shape::new(batch, 1, self.patch_size, self.patch_size)
    }

    pub fn latent_shape(&self, batch: usize) -> Shape {
        let p = self.latent_side();
        Shape::new(batch, self.beta, p, p)
    }

    /// Channel widths entering each decoder module, then the width fed to
    /// the output convolution.
    pub fn decoder_channel_flow(&self) -> [usize; DECODER_MODULES + 1] {
        let mut flow = [0; DECODER_MODULES + 1];
        flow[0] = self.decoder_width;
        for k in 1..=DECODER_MODULES {
            flow[k] = flow[k - 1] / 4;
        }
        flow
    }

    /// Bytes of one stored code at this quantizer depth.
    pub fn bytes_per_code(&self) -> usize {
        if self.quantizer_bits <= 8 {
            1
        } else {
            2
        }
    }

    /// Size of one patch's quantized latent before entropy coding.
    pub fn raw_latent_bytes(&self) -> usize {
        self.latent_shape(1).numel() * self.bytes_per_code()
    }
}

/// Nominal compression ratio of 8-bit pixels against the stored latent:
/// `N^2 * 8 / ((N/16)^2 * beta * bits)`, which is `256 / beta` at 8 bits.
pub fn compression_ratio(config: &CodecConfig) -> f64 {
    let n = config.patch_size as f64;
    let p = config.latent_side() as f64;
    (n * n * 8.0) / (p * p * config.beta as f64 * config.quantizer_bits as f64)
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    spec: ConvSpec,
    weights: ParamId,
    bias: ParamId,
}

impl ConvLayer {
    fn declare(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, spec: ConvSpec) -> Self {
        let fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w;
        // He-uniform; every plain conv here feeds a ReLU or the output
        let bound = (6.0 / fan_in as f64).sqrt();
        let weights = params.push(
            format!("{name}.weight"),
            Tensor::uniform(spec.weight_shape(), -bound, bound, rng),
        );
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([1, spec.out_channels, 1, 1]));
        ConvLayer { spec, weights, bias }
    }

    fn apply(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, vars[self.weights.index()], vars[self.bias.index()], self.spec)
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmLayer {
    spec: ConvLstmSpec,
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
    peephole: Option<ParamId>,
}

impl LstmLayer {
    fn declare(params: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, spec: ConvLstmSpec) -> Result<Self> {
        let init = ConvLstmParams::init(spec, rng)?;
        Ok(LstmLayer {
            spec,
            w_x: params.push(format!("{name}.w_x"), init.w_x),
            w_h: params.push(format!("{name}.w_h"), init.w_h),
            bias: params.push(format!("{name}.bias"), init.bias),
            peephole: init.peephole.map(|t| params.push(format!("{name}.peephole"), t)),
        })
    }

    fn vars(&self, vars: &[Var]) -> LstmVars {
        LstmVars {
            spec: self.spec,
            w_x: vars[self.w_x.index()],
            w_h: vars[self.w_h.index()],
            bias: vars[self.bias.index()],
            peephole: self.peephole.map(|p| vars[p.index()]),
        }
    }
}

#[derive(Clone, Debug)]
struct Layout {
    front_strided: ConvLayer,
    front_pooled: ConvLayer,
    encoder_rnn: [LstmLayer; 3],
    bottleneck: ConvLayer,
    decoder_in: ConvLayer,
    decoder_modules: [[LstmLayer; 2]; DECODER_MODULES],
    decoder_out: ConvLayer,
}

impl Layout {
    fn declare(config: &CodecConfig, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> Result<Self> {
        let f = config.front_width;
        let w = config.rnn_widths;
        let lstm = |cin, hidden, kernel, stride| ConvLstmSpec {
            peephole: config.peephole,
            ..ConvLstmSpec::new(cin, hidden, kernel, stride)
        };

        let front_strided =
            ConvLayer::declare(params, rng, "encoder.front_strided", ConvSpec::square(3, 2, Padding::Same, 1, f));
        let front_pooled =
            ConvLayer::declare(params, rng, "encoder.front_pooled", ConvSpec::square(1, 1, Padding::Valid, 1, f));
        let encoder_rnn = [
            LstmLayer::declare(params, rng, "encoder.rnn0", lstm(f, w[0], 3, 2))?,
            LstmLayer::declare(params, rng, "encoder.rnn1", lstm(w[0], w[1], 3, 2))?,
            LstmLayer::declare(params, rng, "encoder.rnn2", lstm(w[1], w[2], 3, 2))?,
        ];
        let bottleneck = ConvLayer::declare(
            params,
            rng,
            "bottleneck",
            ConvSpec::square(1, 1, Padding::Valid, w[2], config.beta),
        );
        let decoder_in = ConvLayer::declare(
            params,
            rng,
            "decoder.input",
            ConvSpec::square(1, 1, Padding::Valid, config.beta, config.decoder_width),
        );
        let flow = config.decoder_channel_flow();
        let mut modules = Vec::with_capacity(DECODER_MODULES);
        for (k, &c) in flow[..DECODER_MODULES].iter().enumerate() {
            modules.push([
                LstmLayer::declare(params, rng, &format!("decoder.module{k}.branch0"), lstm(c, c, 2, 1))?,
                LstmLayer::declare(params, rng, &format!("decoder.module{k}.branch1"), lstm(c, c, 2, 1))?,
            ]);
        }
        let decoder_out = ConvLayer::declare(
            params,
            rng,
            "decoder.output",
            ConvSpec::square(1, 1, Padding::Valid, flow[DECODER_MODULES], 1),
        );
        Ok(Layout {
            front_strided,
            front_pooled,
            encoder_rnn,
            bottleneck,
            decoder_in,
            decoder_modules: modules.try_into().expect("four decoder modules"),
            decoder_out,
        })
    }
}

/// A configured network with its parameters.
#[derive(Clone, Debug)]
pub struct CodecModel {
    config: CodecConfig,
    params: ParamSet,
    layout: Layout,
}

impl CodecModel {
    /// Builds the network with freshly initialized parameters; the same
    /// config and seed always give bit-identical parameters.
    pub fn build(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let layout = Layout::declare(&config, &mut params, &mut rng)?;
        Ok(CodecModel { config, params, layout })
    }

    /// Rebuilds a model around previously trained parameter tensors, which
    /// must match the config's declaration order and shapes.
    pub fn from_parameters(config: CodecConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut model = CodecModel::build(config, 0)?;
        if tensors.len() != model.params.len() {
            return Err(Error::ModelMismatch(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                tensors.len()
            )));
        }
        for (slot, t) in model.params.tensors_mut().iter_mut().zip(tensors) {
            t.expect_shape(slot.shape(), "parameter")?;
            *slot = t;
        }
        Ok(model)
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Records the encoder on `g`. `vars` are the parameter handles from
    /// [`ParamSet::bind`] or [`ParamSet::bind_frozen`].
    pub fn encode_vars(&self, g: &mut Graph, vars: &[Var], image: Var) -> Result<Var> {
        let s = g.shape(image);
        g.value(image)
            .expect_shape(self.config.image_shape(s.batch), "encode input")?;
        let l = &self.layout;
        let strided = l.front_strided.apply(g, vars, image)?;
        let strided = g.relu(strided);
        let pooled = g.maxpool2x2(image)?;
        let pooled = l.front_pooled.apply(g, vars, pooled)?;
        let pooled = g.relu(pooled);
        let mut x = g.average(strided, pooled)?;
        for layer in &l.encoder_rnn {
            x = layer_forward_vars(g, x, &layer.vars(vars), self.config.steps)?;
        }
        let latent = l.bottleneck.apply(g, vars, x)?;
        Ok(g.relu(latent))
    }

    /// Records the decoder on `g`, without the final clamp to `[0, 1]`.
    pub fn decode_vars(&self, g: &mut Graph, vars: &[Var], latent: Var) -> Result<Var> {
        let s = g.shape(latent);
        g.value(latent)
            .expect_shape(self.config.latent_shape(s.batch), "decode input")?;
        let l = &self.layout;
        let x = l.decoder_in.apply(g, vars, latent)?;
        let mut x = g.relu(x);
        for [a, b] in &l.decoder_modules {
            let ya = layer_forward_vars(g, x, &a.vars(vars), self.config.steps)?;
            let yb = layer_forward_vars(g, x, &b.vars(vars), self.config.steps)?;
            let y = g.average(ya, yb)?;
            x = g.depth_to_space(y, 2)?;
        }
        l.decoder_out.apply(g, vars, x)
    }

    /// Encoder `E` followed by the bottleneck `B`: `(b, 1, N, N)` images with
    /// values in `[0, 1]` to `(b, beta, N/16, N/16)` latents.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let x = g.constant(image.clone());
        let z = self.encode_vars(&mut g, &vars, x)?;
        Ok(g.value(z).clone())
    }

    /// Decoder `D`: latents to images clamped to `[0, 1]`.
    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.params.bind_frozen(&mut g);
        let z = g.constant(latent.clone());
        let y = self.decode_vars(&mut g, &vars, z)?;
        Ok(g.value(y).map(|v| v.clamp(0.0, 1.0)))
    }

    /// `D(B(E(x)))` without quantization.
    pub fn reconstruct(&self, image: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(image)?)
    }
}
