mod common;

use common::{draw, ScalarLstm};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xray_codec::convlstm::{cell_step, layer_forward, ConvLstmParams, ConvLstmSpec, ConvLstmState};
use xray_codec::Tensor;

fn to_tensor(v: &[f64]) -> Tensor {
    Tensor::new([1, v.len(), 1, 1], v.to_vec()).unwrap()
}

#[test]
fn cell_step_matches_scalar_lstm() {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for draw_no in 0..1000 {
        let cin = r.gen_range(1..=4);
        let h = r.gen_range(1..=4);
        let mut spec = ConvLstmSpec::new(cin, h, 1, 1);
        spec.peephole = draw_no % 2 == 1;
        let wx: Vec<Vec<f64>> = (0..4 * h).map(|_| draw(&mut r, cin, 2.0)).collect();
        let wh: Vec<Vec<f64>> = (0..4 * h).map(|_| draw(&mut r, h, 2.0)).collect();
        let b = draw(&mut r, 4 * h, 1.0);
        let peep = spec.peephole.then(|| draw(&mut r, 3 * h, 1.0));
        let x = draw(&mut r, cin, 3.0);
        let hid = draw(&mut r, h, 1.0);
        let cell = draw(&mut r, h, 3.0);

        let params = ConvLstmParams {
            spec,
            w_x: Tensor::new([4 * h, cin, 1, 1], wx.concat()).unwrap(),
            w_h: Tensor::new([4 * h, h, 1, 1], wh.concat()).unwrap(),
            bias: to_tensor(&b),
            peephole: peep.as_deref().map(to_tensor),
        };
        let state = ConvLstmState {
            hidden: to_tensor(&hid),
            cell: to_tensor(&cell),
        };
        let got = cell_step(&to_tensor(&x), &state, &params).unwrap();
        let oracle = ScalarLstm { h, wx, wh, b, peep };
        let (eh, ec) = oracle.step(&x, &hid, &cell);
        for (a, e) in got.hidden.data().iter().zip(&eh).chain(got.cell.data().iter().zip(&ec)) {
            worst = worst.max((a - e).abs());
        }
    }
    assert!(worst <= 1e-12, "max deviation {worst:e}");
}

#[test]
fn unrolled_layer_equals_chained_steps() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    for (spec, hw) in [(ConvLstmSpec::new(2, 3, 3, 2), 6), (ConvLstmSpec::new(3, 3, 2, 1), 5)] {
        let params = ConvLstmParams::init(spec, &mut r).unwrap();
        let x = Tensor::uniform([2, spec.in_channels, hw, hw], -1.0, 1.0, &mut r);
        let state_shape = spec.state_shape(x.shape()).unwrap();
        let mut state = ConvLstmState::zeros(state_shape);
        for steps in 1..=3 {
            state = cell_step(&x, &state, &params).unwrap();
            assert_eq!(layer_forward(&x, &params, steps).unwrap(), state.hidden);
        }
    }
}

#[test]
fn gate_convolutions_are_linear_in_the_input() {
    // With zero biases and zero state, the first step's candidate sum is odd
    // in x: h(-x) = -h(x) when the input and output gates see only x too.
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let spec = ConvLstmSpec::new(2, 2, 3, 1);
    let mut params = ConvLstmParams::init(spec, &mut r).unwrap();
    params.bias = Tensor::zeros(params.bias.shape());
    // zero the input/forget/output gate kernels so they sit at sigmoid(0)
    let per_gate = params.w_x.len() / 4;
    params.w_x.data_mut()[..3 * per_gate].fill(0.0);
    let x = Tensor::uniform([1, 2, 4, 4], -1.0, 1.0, &mut r);
    let h_pos = layer_forward(&x, &params, 1).unwrap();
    let h_neg = layer_forward(&x.map(|v| -v), &params, 1).unwrap();
    for (a, b) in h_pos.data().iter().zip(h_neg.data()) {
        assert!((a + b).abs() < 1e-15);
    }
}
