mod common;

use kvnet::fourier::{ifft2c, ComplexImage};
use kvnet::models::{Batch, Init, KvNet, ModelConfig, VNet};
use kvnet::sampling::{apply_mask, generate_random_mask, zero_fill};
use kvnet::tensor::ParamKind;
use kvnet::{Graph, ParamStore};

fn zero_vnet_output(c: usize, levels: usize, size: usize) -> (Vec<f64>, Vec<f64>) {
    let net = VNet::new("v", c, levels, 0.2, 8);
    let mut store = ParamStore::new();
    net.init(&mut Init::new(&mut store, 1, 0.2)).unwrap();
    store.zero_values(&[ParamKind::Conv, ParamKind::ConvTranspose, ParamKind::Attention]);
    let x = common::random(&[2, 2, size, size], &mut common::rng(2));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = net.forward(&mut g, &store, xv).unwrap();
    (g.value(y).data().to_vec(), x.into_data())
}

#[test]
fn zero_vnet_is_identity() {
    for (c, levels, size) in [(4, 1, 8), (8, 2, 16), (8, 3, 16)] {
        let (y, x) = zero_vnet_output(c, levels, size);
        assert_eq!(y, x, "c={c} L={levels}");
    }
}

/// Zero convolutions, `gamma_i = gamma_k = 0`, `mu = 0`.
pub fn zeroed_kvnet_vs_zero_fill(size: usize) -> (Vec<f64>, Vec<f64>) {
    let cfg = ModelConfig {
        c_v: 4,
        c_k: 2,
        levels: 2,
        blocks: 1,
        ..ModelConfig::default()
    };
    let net = KvNet::new(cfg).unwrap();
    let mut store = net.init_params::<f64>(5).unwrap();
    store.zero_values(&[ParamKind::Conv, ParamKind::ConvTranspose, ParamKind::Attention, ParamKind::Scalar]);
    let k: ComplexImage<f64> = common::phantom_kspaces(1, size, 3).remove(0).cast();
    let m = generate_random_mask(size, 0.08, 4.0, 6).unwrap();
    let k = apply_mask(&k, &m).unwrap();
    let batch = Batch::from_slices(&[&k], &[&m]).unwrap();
    let mut g = Graph::new();
    let y = net.forward(&mut g, &store, &batch).unwrap();
    (g.value(y).data().to_vec(), zero_fill(&k).magnitude())
}

#[test]
fn zeroed_kvnet_returns_zero_fill() {
    let (y, zf) = zeroed_kvnet_vs_zero_fill(32);
    let err = y.iter().zip(&zf).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn hard_dc_cascade_matches_measurements() {
    // With gamma = 1 the fused output agrees with the measured columns.
    let cfg = ModelConfig {
        c_v: 4,
        c_k: 2,
        levels: 1,
        blocks: 2,
        ..ModelConfig::default()
    };
    let net = KvNet::new(cfg).unwrap();
    let store = net.init_params::<f64>(9).unwrap();
    let k: ComplexImage<f64> = common::phantom_kspaces(1, 16, 4).remove(0).cast();
    let m = generate_random_mask(16, 0.125, 4.0, 1).unwrap();
    let k = apply_mask(&k, &m).unwrap();
    let batch = Batch::from_slices(&[&k], &[&m]).unwrap();
    let mut g = Graph::new();
    let img = net.forward_complex(&mut g, &store, &batch).unwrap();
    let v = g.value(img).data();
    let est = ComplexImage::new(16, 16, v[..256].to_vec(), v[256..].to_vec(), kvnet::fourier::Domain::Image).unwrap();
    let k_est = kvnet::fourier::fft2c(&est);
    for i in 0..256 {
        if m.is_sampled(i % 16) {
            assert!((k_est.re[i] - k.re[i]).abs() < 1e-10);
            assert!((k_est.im[i] - k.im[i]).abs() < 1e-10);
        }
    }
    let _ = ifft2c(&k);
}

#[test]
fn extent_not_divisible_is_rejected() {
    let cfg = ModelConfig {
        c_v: 4,
        c_k: 2,
        levels: 3,
        blocks: 1,
        ..ModelConfig::default()
    };
    let net = KvNet::new(cfg).unwrap();
    let store = net.init_params::<f32>(0).unwrap();
    let k = common::phantom_kspaces(1, 12, 0).remove(0);
    let m = generate_random_mask(12, 0.25, 2.0, 0).unwrap();
    let batch = Batch::from_slices(&[&k], &[&m]).unwrap();
    let err = net.forward(&mut Graph::new(), &store, &batch).unwrap_err();
    assert_eq!(err.category(), "invalid-argument", "{err}");
}
