//! Shape and compression-ratio bookkeeping across patch sizes and depths.

use xray_codec::{compression_ratio, quantize, CodecConfig, CodecModel, Tensor};

fn narrow(n: usize, beta: usize) -> CodecConfig {
    CodecConfig {
        front_width: 2,
        rnn_widths: [2, 2, 2],
        steps: 1,
        ..CodecConfig::desk(n, beta)
    }
}

#[test]
fn latent_shape_and_payload_size() {
    for n in [32, 64, 128, 256] {
        for beta in [32, 64, 128] {
            let config = narrow(n, beta);
            let model = CodecModel::build(config, 1).unwrap();
            let image = Tensor::full([1, 1, n, n], 0.5);
            let latent = model.encode(&image).unwrap();
            assert_eq!(latent.shape().dims(), [1, beta, n / 16, n / 16]);
            let recon = model.decode(&latent).unwrap();
            assert_eq!(recon.shape().dims(), [1, 1, n, n]);

            let q = quantize(&latent, 8).unwrap();
            assert_eq!(q.code_bytes().len() * 256, n * n * beta);
            assert_eq!(config.raw_latent_bytes() * 256, n * n * beta);
            assert_eq!(compression_ratio(&config), 256.0 / beta as f64);
            assert_eq!((n * n) as f64 / config.raw_latent_bytes() as f64, 256.0 / beta as f64);
        }
    }
}

#[test]
fn batch_items_are_independent() {
    let model = CodecModel::build(narrow(32, 8), 2).unwrap();
    let a = Tensor::uniform([1, 1, 32, 32], 0.0, 1.0, &mut rand_chacha_rng(1));
    let b = Tensor::uniform([1, 1, 32, 32], 0.0, 1.0, &mut rand_chacha_rng(2));
    let both = model.reconstruct(&Tensor::stack(&[a.clone(), b.clone()]).unwrap()).unwrap();
    let alone_a = model.reconstruct(&a).unwrap();
    let alone_b = model.reconstruct(&b).unwrap();
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12);
    assert!(close(both.item(0), alone_a.data()));
    assert!(close(both.item(1), alone_b.data()));
}

fn rand_chacha_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn decoded_output_is_clamped() {
    let model = CodecModel::build(narrow(32, 8), 3).unwrap();
    let latent = Tensor::full([1, 8, 2, 2], 50.0);
    let recon = model.decode(&latent).unwrap();
    assert!(recon.data().iter().all(|v| (0.0..=1.0).contains(v)));
}
