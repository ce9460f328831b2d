use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn tiny(horizon: usize, weeks: usize) -> ModelConfig {
    ModelConfig {
        segment_len: 4,
        stride: 1,
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        ffn_width: Some(16),
        horizon,
        season_weeks: weeks,
        seed: 11,
    }
}

fn random_segments(rng: &mut ChaCha8Rng, l: usize, p: usize) -> Array2<f64> {
    Array2::from_shape_fn((l, p), |_| rng.random_range(-1.5..1.5))
}

#[test]
fn zero_projection_or_zero_input_gives_positions() {
    let mut m = Model::new(tiny(2, 5)).unwrap();
    let x = array![[1.0, 2.0, 3.0, 4.0], [0.5, 0.0, -1.0, 2.0]];
    let pos = positional_table(2, 8);
    assert_eq!(m.embed(Array2::zeros((2, 4)).view()).unwrap(), pos);
    let doubled = m.embed((&x * 2.0).view()).unwrap() - &pos;
    let single = m.embed(x.view()).unwrap() - &pos;
    for (a, b) in doubled.iter().zip((single * 2.0).iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let embed = m.layout().embed;
    m.params_mut()[embed.range()].fill(0.0);
    assert_eq!(m.embed(x.view()).unwrap(), pos);
}

#[test]
fn embed_rejects_wrong_segment_width() {
    let m = Model::new(tiny(2, 5)).unwrap();
    assert!(m.embed(Array2::zeros((3, 5)).view()).is_err());
}

#[test]
fn attention_rows_are_distributions() {
    let m = Model::new(ModelConfig { n_layers: 2, ..tiny(2, 5) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fwd = m.forward(random_segments(&mut rng, 6, 4).view()).unwrap();
    for layer in 0..fwd.cache.n_layers() {
        for probs in fwd.cache.attention(layer) {
            for row in probs.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }
    }
    let single = m.forward(random_segments(&mut rng, 1, 4).view()).unwrap();
    for probs in single.cache.attention(0) {
        assert_eq!(probs[[0, 0]], 1.0);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let m = Model::new(tiny(2, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = m.embed(random_segments(&mut rng, 3, 4).view()).unwrap();
    let perm = [2usize, 0, 1];
    let u_perm = Array2::from_shape_fn(u.dim(), |(i, j)| u[[perm[i], j]]);
    let (z, _) = encoder_forward(m.layout(), m.params(), 2, u).unwrap();
    let (z_perm, _) = encoder_forward(m.layout(), m.params(), 2, u_perm).unwrap();
    for i in 0..3 {
        for j in 0..8 {
            assert!((z_perm[[i, j]] - z[[perm[i], j]]).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let m = Model::new(tiny(2, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_segments(&mut rng, 5, 4);
    let a = m.encode(x.view()).unwrap();
    let b = m.encode(x.view()).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn head_shapes_and_zero_weights() {
    let mut m = Model::new(tiny(3, 7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for l in [1, 4, 9] {
        let z = m.encode(random_segments(&mut rng, l, 4).view()).unwrap();
        assert_eq!(m.head_reconstruct(Head::RandMask, &z).dim(), (l, 4));
        assert_eq!(m.head_season(&z).dim(), (l, 4));
        assert_eq!(m.head_forecast(&z).len(), 3);
        assert_eq!(m.head_week(&z).len(), 7);
    }
    let z = m.encode(random_segments(&mut rng, 4, 4).view()).unwrap();
    for head in [Head::RandMask, Head::Forecast] {
        let r = m.layout().head(head);
        m.params_mut()[r].fill(0.0);
    }
    assert!(m.head_reconstruct(Head::RandMask, &z).iter().all(|&v| v == 0.0));
    assert_eq!(m.head_forecast(&z), vec![0.0; 3]);
}

#[test]
fn reconstruction_is_tokenwise() {
    let m = Model::new(tiny(2, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = m.encode(random_segments(&mut rng, 5, 4).view()).unwrap();
    let base = m.head_reconstruct(Head::LastMask, &z);
    let mut z2 = z.clone();
    z2.row_mut(2).mapv_inplace(|v| v + 0.3);
    let moved = m.head_reconstruct(Head::LastMask, &z2);
    for l in 0..5 {
        let changed = base.row(l) != moved.row(l);
        assert_eq!(changed, l == 2, "row {l}");
    }
}

/// Central-difference check of every parameter for one example.
fn max_rel_error(model: &Model, example: &Example) -> f64 {
    let mut grads = vec![0.0; model.n_params()];
    model.loss_and_grad(example, &mut grads).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for i in 0..model.n_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = probe.loss(example).unwrap();
        probe.params_mut()[i] = orig - h;
        let down = probe.loss(example).unwrap();
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = numeric.abs().max(grads[i].abs()).max(1e-6);
        worst = worst.max((numeric - grads[i]).abs() / denom);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let m = Model::new(tiny(3, 6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_segments(&mut rng, 4, 4);
    let targets = vec![
        Target::Reconstruct { head: Head::PeakMask, segments: random_segments(&mut rng, 4, 4) },
        Target::Season(vec![1, 2, 4, 3]),
        Target::Forecast(vec![0.3, -0.2, 1.0]),
        Target::Week(4),
    ];
    for target in targets {
        let ex = Example { segments: x.clone(), target };
        let err = max_rel_error(&m, &ex);
        assert!(err < 1e-4, "{:?}: {err}", ex.target.head());
    }
}

#[test]
fn bad_targets_are_rejected() {
    let m = Model::new(tiny(3, 6)).unwrap();
    let x = Array2::zeros((3, 4));
    let bad_week = Example { segments: x.clone(), target: Target::Week(6) };
    assert!(matches!(m.loss(&bad_week), Err(Error::LabelOutOfRange { .. })));
    let bad_season = Example { segments: x.clone(), target: Target::Season(vec![1, 2]) };
    assert!(m.loss(&bad_season).is_err());
    let bad_forecast = Example { segments: x, target: Target::Forecast(vec![1.0]) };
    assert!(m.loss(&bad_forecast).is_err());
}
