//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use kvnet::fourier::ComplexImage;
use kvnet::models::{se_attention, Batch, Init, KvNet, ModelConfig, UNet, VNet};
use kvnet::sampling::generate_random_mask;
use kvnet::tensor::{grad_check, GradCheckReport, PoolKind};
use kvnet::training::{make_phantom_dataset, PhantomSpec};
use kvnet::{Graph, ParamStore, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// `sum(y * w)` for a fixed random `w`, so every output element matters.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = random(g.shape(y), &mut rng(seed ^ 0xabcd));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub fn phantom_kspaces(n: usize, size: usize, seed: u64) -> Vec<ComplexImage<f32>> {
    make_phantom_dataset(&PhantomSpec::new(size, seed), n)
        .unwrap()
        .into_iter()
        .map(|s| s.kspace)
        .collect()
}

/// Checks `build` with every parameter of `store` bound to a checked input.
pub fn grad_check_params(
    store: &ParamStore<f64>,
    extra: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut inputs: Vec<Tensor<f64>> = names.iter().map(|n| store.get(n).unwrap().clone()).collect();
    inputs.extend(extra.iter().cloned());
    grad_check(&inputs, STEP, |g, vars| {
        for (name, &v) in names.iter().zip(vars) {
            g.bind_param(name, v);
        }
        build(g, store, &vars[names.len()..])
    })
}

/// Replaces every parameter whose name contains `pattern` with random values.
pub fn randomize(store: &mut ParamStore<f64>, pattern: &str, seed: u64) {
    let mut r = rng(seed);
    for (name, p) in store.iter_mut() {
        if name.contains(pattern) {
            for v in p.tensor.data_mut() {
                *v = r.random_range(-0.5..0.5);
            }
        }
    }
}

pub struct GradCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub run: fn() -> Result<GradCheckReport>,
}

fn unary(shape: &[usize], seed: u64, op: impl Fn(&mut Graph<f64>, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let x = random(shape, &mut rng(seed));
    grad_check(&[x], STEP, |g, v| {
        let y = op(g, v[0])?;
        weighted_sum(g, y, seed)
    })
}

fn binary(
    a: &[usize],
    b: &[usize],
    seed: u64,
    op: impl Fn(&mut Graph<f64>, Var, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut r = rng(seed);
    let (x, y) = (random(a, &mut r), random(b, &mut r));
    grad_check(&[x, y], STEP, |g, v| {
        let out = op(g, v[0], v[1])?;
        weighted_sum(g, out, seed)
    })
}

fn conv3() -> Result<GradCheckReport> {
    binary(&[2, 3, 5, 6], &[4, 3, 3, 3], 1, |g, x, w| g.conv2d(x, w))
}

fn conv1() -> Result<GradCheckReport> {
    binary(&[2, 3, 4, 4], &[2, 3, 1, 1], 2, |g, x, w| g.conv2d(x, w))
}

fn conv_transpose() -> Result<GradCheckReport> {
    binary(&[2, 3, 3, 4], &[3, 2, 2, 2], 3, |g, x, w| g.conv_transpose2d(x, w))
}

fn max_pool() -> Result<GradCheckReport> {
    unary(&[2, 2, 6, 4], 4, |g, x| g.pool(x, PoolKind::Max))
}

fn avg_pool() -> Result<GradCheckReport> {
    unary(&[2, 2, 6, 4], 5, |g, x| g.pool(x, PoolKind::Avg))
}

fn leaky_relu() -> Result<GradCheckReport> {
    unary(&[2, 3, 4, 4], 6, |g, x| Ok(g.leaky_relu(x, 0.2)))
}

fn sigmoid() -> Result<GradCheckReport> {
    unary(&[3, 5], 7, |g, x| Ok(g.sigmoid(x)))
}

fn affine() -> Result<GradCheckReport> {
    unary(&[3, 5], 8, |g, x| {
        let y = g.scale(x, -1.5);
        Ok(g.affine(y, 0.3, 2.0))
    })
}

fn add() -> Result<GradCheckReport> {
    binary(&[2, 2, 3, 3], &[2, 2, 3, 3], 9, |g, a, b| g.add(a, b))
}

fn mul() -> Result<GradCheckReport> {
    binary(&[2, 2, 3, 3], &[2, 2, 3, 3], 10, |g, a, b| g.mul(a, b))
}

fn scale_channels() -> Result<GradCheckReport> {
    binary(&[2, 3, 4, 4], &[2, 3], 11, |g, x, s| g.scale_channels(x, s))
}

fn linear() -> Result<GradCheckReport> {
    let mut r = rng(12);
    let inputs = [random(&[3, 5], &mut r), random(&[4, 5], &mut r), random(&[4], &mut r)];
    grad_check(&inputs, STEP, |g, v| {
        let y = g.linear(v[0], v[1], v[2])?;
        weighted_sum(g, y, 12)
    })
}

fn global_avg_pool() -> Result<GradCheckReport> {
    unary(&[2, 3, 4, 5], 13, |g, x| g.global_avg_pool(x))
}

fn magnitude() -> Result<GradCheckReport> {
    unary(&[2, 2, 4, 4], 14, |g, x| g.magnitude(x))
}

fn fft() -> Result<GradCheckReport> {
    unary(&[1, 4, 4, 6], 15, |g, x| g.fft2c(x))
}

fn ifft() -> Result<GradCheckReport> {
    unary(&[2, 2, 6, 4], 16, |g, x| g.ifft2c(x))
}

fn concat() -> Result<GradCheckReport> {
    binary(&[2, 2, 3, 3], &[2, 3, 3, 3], 17, |g, a, b| g.concat(a, b))
}

fn data_consistency() -> Result<GradCheckReport> {
    let mut r = rng(18);
    let raw = random_vec(2 * 2 * 4 * 6, &mut r);
    let mask: Vec<f64> = (0..2 * 6).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
    let inputs = [random(&[2, 2, 4, 6], &mut r), Tensor::scalar(0.6)];
    grad_check(&inputs, STEP, |g, v| {
        let y = g.data_consistency(v[0], v[1], &raw, &mask)?;
        weighted_sum(g, y, 18)
    })
}

fn fuse() -> Result<GradCheckReport> {
    let mut r = rng(19);
    let inputs = [random(&[2, 2, 3, 3], &mut r), random(&[2, 2, 3, 3], &mut r), Tensor::scalar(0.4)];
    grad_check(&inputs, STEP, |g, v| {
        let y = g.fuse(v[0], v[1], v[2])?;
        weighted_sum(g, y, 19)
    })
}

fn ssim() -> Result<GradCheckReport> {
    let mut r = rng(20);
    let x = Tensor::new(&[2, 1, 16, 16], (0..512).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let target: Vec<f64> = (0..512).map(|_| r.random_range(0.0..1.0)).collect();
    grad_check(&[x], STEP, |g, v| g.ssim(v[0], &target, &[1.0, 0.8]))
}

fn se() -> Result<GradCheckReport> {
    let mut store = ParamStore::new();
    Init::new(&mut store, 21, 0.2).se("se", 8, 4)?;
    randomize(&mut store, "fc2", 21);
    let x = random(&[2, 8, 3, 3], &mut rng(22));
    grad_check_params(&store, &[x], |g, s, v| {
        let y = se_attention(g, s, "se", v[0], 0.2)?;
        weighted_sum(g, y, 22)
    })
}

fn cd_pool_max() -> Result<GradCheckReport> {
    unary(&[1, 2, 4, 4], 23, |g, x| kvnet::models::cd_pool(g, x, PoolKind::Max))
}

fn cd_pool_avg() -> Result<GradCheckReport> {
    unary(&[1, 4, 4, 4], 24, |g, x| kvnet::models::cd_pool(g, x, PoolKind::Avg))
}

fn cd_upsample() -> Result<GradCheckReport> {
    binary(&[1, 2, 2, 3], &[2, 2, 2, 2], 25, kvnet::models::cd_upsample)
}

fn vnet() -> Result<GradCheckReport> {
    let net = VNet::new("v", 4, 1, 0.2, 2);
    let mut store = ParamStore::new();
    net.init(&mut Init::new(&mut store, 26, 0.2))?;
    randomize(&mut store, "fc2", 26);
    let x = random(&[1, 2, 4, 4], &mut rng(27));
    grad_check_params(&store, &[x], |g, s, v| {
        let y = net.forward(g, s, v[0])?;
        weighted_sum(g, y, 27)
    })
}

fn knet() -> Result<GradCheckReport> {
    let net = UNet::knet("k", 2, 1, 0.2);
    let mut store = ParamStore::new();
    net.init(&mut Init::new(&mut store, 28, 0.2))?;
    let x = random(&[1, 2, 4, 4], &mut rng(29));
    grad_check_params(&store, &[x], |g, s, v| {
        let y = net.forward(g, s, v[0])?;
        weighted_sum(g, y, 29)
    })
}

/// Micro cascade: `T = 1`, `c_v = 4`, `c_k = 2`, `L = 1`, 8×8, SSIM loss.
pub fn micro_kvnet() -> Result<GradCheckReport> {
    let config = ModelConfig {
        c_v: 4,
        c_k: 2,
        levels: 1,
        blocks: 1,
        se_reduction: 2,
        ..ModelConfig::default()
    };
    let net = KvNet::new(config)?;
    let mut store = net.init_params::<f64>(30)?;
    randomize(&mut store, "fc2", 30);
    for (name, value) in [("block0.gamma_k", 0.7), ("block0.gamma_i", 0.8), ("block0.mu", 0.5)] {
        store.get_mut(name).unwrap().data_mut()[0] = value;
    }
    let k = phantom_kspaces(1, 8, 31).remove(0).cast::<f64>();
    let mask = generate_random_mask(8, 0.25, 2.0, 31)?;
    let k = kvnet::sampling::apply_mask(&k, &mask)?;
    let batch = Batch::from_slices(&[&k], &[&mask])?;
    let target = kvnet::fourier::ifft2c(&k).magnitude();
    let range = target.iter().cloned().fold(0.0, f64::max);
    grad_check_params(&store, &[], |g, s, _| {
        let out = net.forward(g, s, &batch)?;
        let ssim = g.ssim(out, &target, &[range])?;
        Ok(g.affine(ssim, -1.0, 1.0))
    })
}

pub fn grad_cases() -> Vec<GradCase> {
    macro_rules! case {
        ($f:ident) => {
            case!($f, 1e-4)
        };
        ($f:ident, $tol:expr) => {
            GradCase {
                name: stringify!($f),
                tolerance: $tol,
                run: $f,
            }
        };
    }
    vec![
        case!(conv3),
        case!(conv1),
        case!(conv_transpose),
        case!(max_pool),
        case!(avg_pool),
        case!(leaky_relu),
        case!(sigmoid),
        case!(affine),
        case!(add),
        case!(mul),
        case!(scale_channels),
        case!(linear),
        case!(global_avg_pool),
        case!(magnitude),
        case!(fft),
        case!(ifft),
        case!(concat),
        case!(data_consistency),
        case!(fuse),
        case!(ssim),
        case!(se),
        case!(cd_pool_max),
        case!(cd_pool_avg),
        case!(cd_upsample),
        case!(vnet),
        case!(knet),
        case!(micro_kvnet, 1e-3),
    ]
}
