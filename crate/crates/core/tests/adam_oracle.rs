use xray_codec::{AdamConfig, AdamState, Tensor};

#[test]
fn two_steps_with_constant_gradient() {
    // alpha 1e-3, g = 0.5, eps 1e-8. Both steps have m_hat = g and
    // v_hat = g^2, so each moves theta by 1e-3 * 0.5 / (0.5 + 1e-8).
    let config = AdamConfig {
        learning_rate: 1e-3,
        ..AdamConfig::default()
    };
    let mut params = vec![Tensor::scalar(1.0)];
    let mut state = AdamState::new(config, &params);
    let grads = vec![Tensor::scalar(0.5)];
    let names = vec!["theta".to_string()];

    state.step(&mut params, &grads, &names).unwrap();
    assert!((params[0].data()[0] - 0.999_000_000_02).abs() <= 1e-15);
    assert!((state.first_moment()[0].data()[0] - 0.05).abs() <= 1e-15);
    assert!((state.second_moment()[0].data()[0] - 0.000_25).abs() <= 1e-15);

    state.step(&mut params, &grads, &names).unwrap();
    assert!((params[0].data()[0] - 0.998_000_000_04).abs() <= 1e-15);
    assert!((state.first_moment()[0].data()[0] - 0.095).abs() <= 1e-15);
    assert!((state.second_moment()[0].data()[0] - 0.000_499_75).abs() <= 1e-15);
    assert_eq!(state.steps(), 2);
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
    let mut state = AdamState::new(AdamConfig::default(), &params);
    let grads = vec![Tensor::scalar(0.1), Tensor::scalar(f64::NAN)];
    let names = vec!["a".to_string(), "decoder.output.bias".to_string()];
    let err = state.step(&mut params, &grads, &names).unwrap_err().to_string();
    assert!(err.contains("decoder.output.bias"), "{err}");
    assert_eq!(params[0].data()[0], 1.0);
    assert_eq!(state.steps(), 0);
}
