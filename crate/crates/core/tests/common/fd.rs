//! Finite-difference cases shared by the gradient tests and the acceptance run.

use rand::Rng;
use xray_codec::convlstm::{layer_forward_vars, ConvLstmParams, ConvLstmSpec};
use xray_codec::ops::Activation;
use xray_codec::{ConvSpec, Graph, Padding, Tensor, Var};

use super::{away_from_zero, check, rand_tensor, rng};

pub fn conv_case(name: &str, kh: usize, kw: usize, stride: usize, padding: Padding, h: usize, w: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = ConvSpec {
        kernel_h: kh,
        kernel_w: kw,
        stride_h: stride,
        stride_w: stride,
        padding,
        in_channels: 2,
        out_channels: 3,
    };
    let inputs = [
        rand_tensor([2, 2, h, w], &mut r),
        rand_tensor(spec.weight_shape().dims(), &mut r),
        rand_tensor([1, 3, 1, 1], &mut r),
    ];
    check(name, &inputs, &|g, v| g.conv2d(v[0], v[1], v[2], spec), None)
}

pub fn conv2d_variants() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(conv_case("3x3 valid", 3, 3, 1, Padding::Valid, 4, 4, 1));
    worst = worst.max(conv_case("3x3 same", 3, 3, 1, Padding::Same, 4, 4, 2));
    worst = worst.max(conv_case("3x3 stride 2 same", 3, 3, 2, Padding::Same, 4, 4, 3));
    worst = worst.max(conv_case("3x3 stride 2 same odd", 3, 3, 2, Padding::Same, 3, 4, 4));
    worst = worst.max(conv_case("2x2 same", 2, 2, 1, Padding::Same, 4, 3, 5));
    worst = worst.max(conv_case("1x1", 1, 1, 1, Padding::Valid, 4, 4, 6));
    worst = worst.max(conv_case("1x3 same", 1, 3, 1, Padding::Same, 3, 4, 7));
    worst = worst.max(conv_case("2x2 stride 2 valid", 2, 2, 2, Padding::Valid, 4, 4, 8));
    worst
}

pub fn maxpool() -> f64 {
    let mut worst: f64 = 0.0;
    // distinct values keep every 2x2 block away from ties
    let mut r = rng(10);
    let mut vals: Vec<f64> = (0..2 * 3 * 16).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::new([2, 3, 4, 4], vals).unwrap();
    worst = worst.max(check("maxpool", &[x], &|g, v| g.maxpool2x2(v[0]), None));
    worst
}

pub fn depth_space_rearrangements() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(11);
    worst = worst.max(check("d2s", &[rand_tensor([2, 8, 2, 2], &mut r)], &|g, v| g.depth_to_space(v[0], 2), None));
    worst = worst.max(check("s2d", &[rand_tensor([2, 2, 4, 4], &mut r)], &|g, v| g.space_to_depth(v[0], 2), None));
    worst
}

pub fn activations() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(12);
    for kind in [Activation::Relu, Activation::Sigmoid, Activation::Tanh] {
        let x = away_from_zero([2, 3, 4, 4], 1e-3, &mut r).map(|v| 3.0 * v);
        worst = worst.max(check(&format!("{kind:?}"), &[x], &|g, v| Ok(g.activation(v[0], kind)), None));
    }
    worst
}

pub fn elementwise_binary_ops() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(13);
    let a = rand_tensor([2, 3, 4, 4], &mut r);
    let b = rand_tensor([2, 3, 4, 4], &mut r);
    let pair = [a, b];
    worst = worst.max(check("add", &pair, &|g, v| g.add(v[0], v[1]), None));
    worst = worst.max(check("average", &pair, &|g, v| g.average(v[0], v[1]), None));
    worst = worst.max(check("mul", &pair, &|g, v| g.mul(v[0], v[1]), None));
    worst
}

pub fn channel_ops() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(14);
    let x = rand_tensor([2, 5, 3, 3], &mut r);
    worst = worst.max(check("slice", &[x.clone()], &|g, v| g.slice_channels(v[0], 1, 3), None));
    let s = rand_tensor([1, 5, 1, 1], &mut r);
    worst = worst.max(check("channel_scale", &[x, s], &|g, v| g.channel_scale(v[0], v[1]), None));
    worst
}

pub fn reductions_and_loss() -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(15);
    let x = rand_tensor([2, 2, 4, 4], &mut r);
    worst = worst.max(check("sum", &[x.clone()], &|g, v| Ok(g.sum(v[0])), None));
    // keep every difference clear of the kink at zero
    let d = away_from_zero([2, 2, 4, 4], 1e-3, &mut r);
    let y = x.zip_map(&d, "test", |a, b| a + b).unwrap();
    worst = worst.max(check("l1", &[y, x], &|g, v| g.l1_loss(v[0], v[1]), None));
    worst
}

pub fn lstm_case(name: &str, spec: ConvLstmSpec, hw: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut p = ConvLstmParams::init(spec, &mut r).unwrap();
    // nonzero biases and peepholes exercise every term
    p.bias = rand_tensor(p.bias.shape().dims(), &mut r);
    if let Some(ph) = &mut p.peephole {
        *ph = rand_tensor(ph.shape().dims(), &mut r);
    }
    let mut inputs = vec![
        rand_tensor([2, spec.in_channels, hw, hw], &mut r),
        p.w_x.clone(),
        p.w_h.clone(),
        p.bias.clone(),
    ];
    if let Some(ph) = &p.peephole {
        inputs.push(ph.clone());
    }
    let build = move |g: &mut Graph, v: &[Var]| {
        let vars = xray_codec::convlstm::LstmVars {
            spec,
            w_x: v[1],
            w_h: v[2],
            bias: v[3],
            peephole: v.get(4).copied(),
        };
        layer_forward_vars(g, v[0], &vars, 2)
    };
    check(name, &inputs, &build, None)
}

/// Every primitive, in a fixed order.
pub fn primitives() -> f64 {
    [conv2d_variants, maxpool, depth_space_rearrangements, activations, elementwise_binary_ops, channel_ops, reductions_and_loss]
        .iter()
        .map(|case| case())
        .fold(0.0, f64::max)
}

pub fn convlstm_two_steps() -> f64 {
    let mut worst: f64 = 0.0;
    worst = worst.max(lstm_case("k3 s2", ConvLstmSpec::new(2, 3, 3, 2), 4, 20));
    worst = worst.max(lstm_case("k2 s1", ConvLstmSpec::new(3, 3, 2, 1), 3, 21));
    let mut peep = ConvLstmSpec::new(2, 2, 3, 1);
    peep.peephole = true;
    worst = worst.max(lstm_case("peephole", peep, 4, 22));
    worst
}
