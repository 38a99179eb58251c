use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridge_core::gan_mlp::{
    forward, gan_loss_and_grads, make_mog_gan, MlpArch, MlpGanProblem, MlpParams, MogGanConfig, OutputActivation,
};
use ridge_core::problems::ZeroSumProblem;
use ridge_core::vecspace::{DenseMatrix, JointPoint};
use ridge_core::RidgeError;

/// Straight-line forward pass read directly off the documented flat layout.
fn reference_forward(widths: &[usize], sigmoid_out: bool, flat: &[f64], input: &[f64]) -> Vec<f64> {
    let mut act = input.to_vec();
    let mut off = 0;
    for l in 0..widths.len() - 1 {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut s = flat[off + n_in * n_out + o];
            for i in 0..n_in {
                s += flat[off + o * n_in + i] * act[i];
            }
            next[o] = if l + 2 < widths.len() { s.tanh() } else { s };
        }
        off += n_in * n_out + n_out;
        act = next;
    }
    if sigmoid_out {
        act.iter().map(|a| 1.0 / (1.0 + (-a).exp())).collect()
    } else {
        act
    }
}

fn gan_parts(
    hidden: usize,
    latent: usize,
    n_data: usize,
    n_latent: usize,
    seed: u64,
) -> (MlpParams, MlpParams, Vec<f64>, DenseMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ga = MlpArch::new(vec![latent, hidden, hidden, 1], OutputActivation::Identity).unwrap();
    let da = MlpArch::new(vec![1, hidden, hidden, 1], OutputActivation::Sigmoid).unwrap();
    let gen = MlpParams::init(&ga, &mut rng);
    let disc = MlpParams::init(&da, &mut rng);
    let data: Vec<f64> = (0..n_data).map(|_| rng.random_range(-5.0..5.0)).collect();
    let latents = DenseMatrix::from_fn(n_latent, latent, |_, _| rng.random_range(-2.0..2.0));
    (gen, disc, data, latents)
}

fn loss(gen: &MlpParams, disc: &MlpParams, data: &[f64], latents: &DenseMatrix) -> f64 {
    gan_loss_and_grads(gen, disc, data, latents, 0.0002).unwrap().value
}

/// Central differences on `k` random coordinates of both players.
fn fd_check(gen: &MlpParams, disc: &MlpParams, data: &[f64], latents: &DenseMatrix, k: usize, seed: u64) {
    let eval = gan_loss_and_grads(gen, disc, data, latents, 0.0002).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ng, nd) = (gen.as_flat().len(), disc.as_flat().len());
    for _ in 0..k {
        let j = rng.random_range(0..ng + nd);
        let (analytic, base) = if j < ng {
            (eval.grad_gen[j], gen.as_flat()[j])
        } else {
            (eval.grad_disc[j - ng], disc.as_flat()[j - ng])
        };
        let h = f64::EPSILON.cbrt() * base.abs().max(1.0);
        let at = |delta: f64| {
            if j < ng {
                let mut f = gen.as_flat().to_vec();
                f[j] += delta;
                loss(&MlpParams::from_flat(gen.arch(), &f).unwrap(), disc, data, latents)
            } else {
                let mut f = disc.as_flat().to_vec();
                f[j - ng] += delta;
                loss(gen, &MlpParams::from_flat(disc.arch(), &f).unwrap(), data, latents)
            }
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(
            (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1e-4),
            "coordinate {j}: backprop {analytic:e}, fd {fd:e}"
        );
    }
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for widths in [vec![3, 5, 2], vec![1, 16, 16, 1], vec![8, 4, 7, 3, 1], vec![2, 2]] {
        for sigmoid_out in [false, true] {
            let out = if sigmoid_out { OutputActivation::Sigmoid } else { OutputActivation::Identity };
            let arch = MlpArch::new(widths.clone(), out).unwrap();
            let p = MlpParams::init(&arch, &mut rng);
            let inputs = DenseMatrix::from_fn(9, widths[0], |_, _| rng.random_range(-3.0..3.0));
            let got = forward(&p, &inputs).unwrap();
            for i in 0..9 {
                let want = reference_forward(&widths, sigmoid_out, p.as_flat(), inputs.row(i));
                for (a, b) in got.row(i).iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12, "{widths:?}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn forward_rejects_shape_mismatch() {
    let arch = MlpArch::new(vec![3, 4, 1], OutputActivation::Identity).unwrap();
    let p = MlpParams::zeros(&arch);
    assert!(matches!(forward(&p, &DenseMatrix::zeros(2, 2)), Err(RidgeError::Shape(_))));
}

#[test]
fn backprop_matches_finite_differences() {
    let (gen, disc, data, latents) = gan_parts(16, 8, 60, 40, 1);
    fd_check(&gen, &disc, &data, &latents, 20, 10);
}

#[test]
fn gradient_check_across_random_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for case in 0..50 {
        let hidden = rng.random_range(4..=64);
        let latent = rng.random_range(1..=16);
        let (gen, disc, data, latents) = gan_parts(hidden, latent, 30, 20, 1000 + case);
        fd_check(&gen, &disc, &data, &latents, 6, case);
    }
}

#[test]
fn duplicating_the_batch_changes_nothing() {
    let (gen, disc, data, latents) = gan_parts(8, 4, 25, 15, 2);
    let once = gan_loss_and_grads(&gen, &disc, &data, &latents, 0.0002).unwrap();
    let data2 = [data.clone(), data].concat();
    let lat2 = DenseMatrix::from_row_major(30, 4, [latents.as_slice(), latents.as_slice()].concat()).unwrap();
    let twice = gan_loss_and_grads(&gen, &disc, &data2, &lat2, 0.0002).unwrap();
    assert!((once.value - twice.value).abs() <= 1e-14);
    for (a, b) in once.grad_gen.iter().chain(&once.grad_disc).zip(twice.grad_gen.iter().chain(&twice.grad_disc)) {
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }
}

#[test]
fn non_finite_loss_reports_the_sample() {
    let (gen, disc, mut data, latents) = gan_parts(4, 2, 10, 5, 3);
    data[4] = f64::NAN;
    match gan_loss_and_grads(&gen, &disc, &data, &latents, 0.0002) {
        Err(RidgeError::NonFiniteLoss { index }) => assert_eq!(index, 4),
        other => panic!("unexpected {other:?}"),
    }
    assert!(gan_loss_and_grads(&gen, &disc, &[], &latents, 0.0002).is_err());
}

#[test]
fn saturated_discriminator_is_clamped() {
    let (gen, disc, data, latents) = gan_parts(4, 2, 10, 5, 4);
    let mut flat = disc.as_flat().to_vec();
    *flat.last_mut().unwrap() = -100.0;
    let disc = MlpParams::from_flat(disc.arch(), &flat).unwrap();
    let out = gan_loss_and_grads(&gen, &disc, &data, &latents, 0.0).unwrap();
    assert!((out.value - ridge_core::gan_mlp::LOG_CLAMP).abs() < 1e-12);
    assert!(out.grad_disc.iter().all(|g| g.abs() < 1e-30));
}

#[test]
fn problem_partitions_and_is_deterministic() {
    let p = make_mog_gan(40, 6, 7).unwrap();
    let (n, m) = p.dims();
    assert_eq!(n, p.gen_arch().n_params());
    assert_eq!(m, p.disc_arch().n_params());
    assert_eq!(p.gen_arch().input_dim(), 16);
    let q = make_mog_gan(40, 6, 7).unwrap();
    let z = p.default_start();
    assert_eq!(z, q.default_start());
    assert_eq!(p.value(&z).to_bits(), q.value(&z).to_bits());
    let g = p.grad(&z);
    assert_eq!(g.concat(), q.grad(&z).concat());
    let eval = p.evaluate(&z).unwrap();
    assert_eq!(JointPoint::new(eval.grad_gen, eval.grad_disc), g);
}

#[test]
fn data_follows_the_three_component_mixture() {
    let p = MlpGanProblem::new(MogGanConfig { n_points: 3000, ..MogGanConfig::desk() }).unwrap();
    let mut counts = [0usize; 3];
    for &x in p.data() {
        let k = [-4.0f64, 0.0, 4.0].iter().position(|c| (x - c).abs() < 0.6).expect("near a mode");
        counts[k] += 1;
    }
    for c in counts {
        assert!((c as f64 / 3000.0 - 1.0 / 3.0).abs() < 0.04, "{counts:?}");
    }
}

#[test]
fn constructor_rejects_tiny_configs() {
    assert!(make_mog_gan(29, 16, 0).is_err());
    assert!(make_mog_gan(30, 3, 0).is_err());
}

#[test]
fn full_scale_config_is_constructible() {
    let p = MlpGanProblem::new(MogGanConfig::full()).unwrap();
    let (n, m) = p.dims();
    assert_eq!(n, 16 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
    assert_eq!(m, 64 + 64 + 64 * 64 + 64 + 64 + 1);
    assert_eq!(p.data().len(), 5000);
}

proptest! {
    #[test]
    fn flat_layout_round_trips(widths in prop::collection::vec(1usize..12, 2..5), seed in 0u64..1000) {
        let arch = MlpArch::new(widths.clone(), OutputActivation::Sigmoid).unwrap();
        let p = MlpParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed));
        let q = MlpParams::from_flat(&arch, p.as_flat()).unwrap();
        prop_assert_eq!(&q, &p);
        let mut rebuilt = Vec::new();
        for l in 0..arch.n_layers() {
            rebuilt.extend_from_slice(p.weight(l).as_slice());
            rebuilt.extend_from_slice(p.bias(l));
        }
        prop_assert_eq!(rebuilt, p.as_flat().to_vec());
    }
}
