use super::*;
use crate::testing::{max_rel_error, probe_values};

fn small(causal: bool) -> LearnableTokenizer {
    LearnableTokenizer::seeded(6, 5, 4, causal, 11).unwrap()
}

fn sine(n: usize, f: f64, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (f * i as f64 + phase).sin()).collect()
}

#[test]
fn relaxation_endpoints() {
    let tok = small(false);
    let x = probe_values(30, 1);
    let (alpha, z1) = tok.encode(&x, 1.0).unwrap();
    let soft = crate::nnkit::softmax_rows(&alpha);
    for (a, b) in z1.data().iter().zip(soft.data()) {
        assert!((a - b).abs() < 1e-15);
    }
    let (_, z0) = tok.encode(&x, 0.0).unwrap();
    for (row, arow) in z0.data().chunks_exact(6).zip(alpha.data().chunks_exact(6)) {
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 5);
        assert_eq!(row[argmax(arow)], 1.0);
    }
}

#[test]
fn half_relaxation_is_a_mixture() {
    let tok = small(true);
    let x = probe_values(40, 2);
    let (alpha, z) = tok.encode(&x, 0.5).unwrap();
    let soft = crate::nnkit::softmax_rows(&alpha);
    for ((row, s), a) in z.data().chunks_exact(6).zip(soft.data().chunks_exact(6)).zip(alpha.data().chunks_exact(6)) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let k = argmax(a);
        let smax = s.iter().copied().fold(0.0, f64::max);
        assert!(row[k] >= 0.5 * smax + 0.5 - 1e-12);
    }
    assert!(tok.encode(&x, 1.5).is_err());
}

#[test]
fn argmax_ties_go_low() {
    assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[3.0, 3.0]), 0);
}

fn set_decoder(tok: &mut LearnableTokenizer, kernel: &[f64], w: f64, b: f64) {
    let v = tok.raw_vocab_size();
    let mut p = tok.params_mut();
    let n = p.len();
    p[n - 3].data_mut().copy_from_slice(kernel);
    p[n - 2].data_mut().iter_mut().for_each(|x| *x = w);
    p[n - 1].data_mut().iter_mut().for_each(|x| *x = b / v as f64);
}

#[test]
fn impulse_response_follows_the_window() {
    for causal in [true, false] {
        let mut tok = small(causal);
        // kernel for token 2 is [1, 2, 3, 4] over its four taps, zero elsewhere
        let mut kernel = vec![0.0; 4 * 6];
        for k in 0..4 {
            kernel[k * 6 + 2] = (k + 1) as f64;
        }
        set_decoder(&mut tok, &kernel, 1.0, 0.0);
        let mut zeta = Tensor::zeros(&[10, 6]);
        zeta.data_mut()[4 * 6 + 2] = 1.0;
        let x = tok.decode(&zeta).unwrap();
        let start = if causal { 4 } else { 3 };
        let mut want = vec![0.0; 10];
        want[start..start + 4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x, want);
    }
}

#[test]
fn bias_path_gives_constant() {
    let mut tok = small(false);
    set_decoder(&mut tok, &[0.0; 24], 1.0, 2.5);
    let (_, z) = tok.encode(&probe_values(12, 3), 0.3).unwrap();
    for x in tok.decode(&z).unwrap() {
        assert!((x - 2.5).abs() < 1e-12);
    }
}

#[test]
fn causal_decoder_ignores_the_future() {
    let tok = small(true);
    let (_, z) = tok.encode(&probe_values(20, 4), 0.4).unwrap();
    let mut z2 = z.clone();
    for j in 0..6 {
        z2.data_mut()[11 * 6 + j] = if j == 0 { 1.0 } else { 0.0 };
    }
    let (a, b) = (tok.decode(&z).unwrap(), tok.decode(&z2).unwrap());
    assert_eq!(&a[..11], &b[..11]);
}

#[test]
fn causal_tokens_ignore_the_future() {
    let tok = small(true);
    let x = probe_values(30, 5);
    let mut y = x.clone();
    y[20] += 3.0;
    let ts = |v: Vec<f64>| TimeSeries::from_channels(vec![v], 100.0, 0).unwrap();
    let a = tok.tokenize(&ts(x)).unwrap();
    let b = tok.tokenize(&ts(y)).unwrap();
    assert_eq!(&a.labels()[..20], &b.labels()[..20]);
}

fn gradient_error(causal: bool, kappa: f64) -> f64 {
    let mut tok = small(causal);
    // move biases off zero so every parameter has a generic gradient
    for p in tok.params_mut() {
        if p.shape().len() == 1 {
            let n = p.len();
            p.data_mut().copy_from_slice(&probe_values(n, n as u64).iter().map(|v| 0.3 * v).collect::<Vec<_>>());
        }
    }
    let x = Tensor::new(vec![12, 3, 1], probe_values(36, 9).iter().map(|v| 2.0 * v).collect()).unwrap();
    let (_, grads) = tok.loss_and_grads(&x, kappa).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        let n = g.len();
        let mut num = Vec::with_capacity(n);
        for i in 0..n {
            let orig = tok.params()[p].data()[i];
            tok.params_mut()[p].data_mut()[i] = orig + h;
            let up = tok.loss(&x, kappa).unwrap();
            tok.params_mut()[p].data_mut()[i] = orig - h;
            let down = tok.loss(&x, kappa).unwrap();
            tok.params_mut()[p].data_mut()[i] = orig;
            num.push((up - down) / (2.0 * h));
        }
        worst = worst.max(max_rel_error(g.data(), &num));
    }
    worst
}

#[test]
fn end_to_end_gradients() {
    for causal in [true, false] {
        for kappa in [1.0, 0.5] {
            let err = gradient_error(causal, kappa);
            assert!(err < 1e-4, "causal={causal} kappa={kappa}: {err}");
        }
    }
}

#[test]
fn encoder_gets_no_gradient_when_hard() {
    let tok = small(false);
    let x = Tensor::new(vec![8, 2, 1], probe_values(16, 3)).unwrap();
    let (_, grads) = tok.loss_and_grads(&x, 0.0).unwrap();
    assert!(grads[..8].iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    assert!(grads[8].data().iter().any(|&v| v != 0.0));
}

#[test]
fn anneal_schedule() {
    let s = AnnealSchedule { epochs: 4 };
    let k: Vec<f64> = (0..=4).map(|e| s.kappa(e)).collect();
    assert_eq!(k, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    assert_eq!(s.kappa(9), 0.0);
}

fn tiny_config(causal: bool) -> LearnableConfig {
    LearnableConfig {
        vocab_size: 8,
        hidden: 6,
        d_token: 3,
        causal,
        batch_size: 4,
        seq_len: 24,
        epochs: 3,
        lr: 1e-2,
        seed: 5,
        ..LearnableConfig::default()
    }
}

fn tiny_segments() -> Vec<Vec<f64>> {
    (0..12).map(|i| sine(24, 0.4 + 0.02 * i as f64, i as f64)).collect()
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(false);
    let (a, ra) = LearnableTokenizer::train(&tiny_segments(), &cfg).unwrap();
    let (b, rb) = LearnableTokenizer::train(&tiny_segments(), &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.params(), b.params());
    for (k, want) in ra.kappas.iter().zip([1.0, 2.0 / 3.0, 1.0 / 3.0]) {
        assert!((k - want).abs() < 1e-15);
    }
    assert!(ra.loss_curve.iter().all(|l| l.is_finite()));
}

#[test]
fn restarts_pick_lowest_final_loss() {
    let cfg = LearnableConfig { restarts: 3, ..tiny_config(true) };
    let (tok, rep) = LearnableTokenizer::train(&tiny_segments(), &cfg).unwrap();
    assert_eq!(rep.restart_losses.len(), 3);
    let best = rep.restart_losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(rep.restart_losses[rep.selected], best);
    assert_eq!(*rep.loss_curve.last().unwrap(), best);
    assert_eq!(tok.training_record(), Some(&rep));
}

#[test]
fn training_rejects_bad_input() {
    let cfg = tiny_config(true);
    assert!(matches!(LearnableTokenizer::train(&[], &cfg), Err(Error::EmptyData)));
    assert!(LearnableTokenizer::train(&[vec![0.0; 4], vec![0.0; 5]], &cfg).is_err());
    assert!(LearnableTokenizer::train(&tiny_segments(), &LearnableConfig { epochs: 0, ..cfg }).is_err());
}

fn recording() -> TimeSeries {
    TimeSeries::from_channels(vec![sine(300, 0.3, 0.0), sine(300, 0.17, 1.0), probe_values(300, 8)], 100.0, 2).unwrap()
}

#[test]
fn refactorization_preserves_reconstruction() {
    let mut tok = LearnableTokenizer::seeded(16, 8, 5, false, 3).unwrap();
    let ts = recording();
    let meta = SeriesMeta::of(&ts);
    let before = tok.detokenize(&tok.tokenize(&ts).unwrap(), &meta).unwrap();
    let raw_counts = tok.tokenize(&ts).unwrap().counts();

    let chans: Vec<&[f64]> = ts.iter_channels().collect();
    let v_star = tok.refactorize(&chans).unwrap();
    let used = raw_counts.iter().filter(|&&c| c > 0).count();
    assert_eq!(v_star, used);
    assert_eq!(tok.vocab_size(), v_star + 1);

    let tokens = tok.tokenize(&ts).unwrap();
    assert!(tokens.labels().iter().all(|&l| (l as usize) < v_star));
    let after = tok.detokenize(&tokens, &meta).unwrap();
    assert_eq!(before.data(), after.data());

    let map = tok.refactor_map().unwrap();
    assert!(map.counts.windows(2).all(|w| w[0] >= w[1]));
    for (k, &old) in map.new_to_old.iter().enumerate() {
        assert_eq!(map.counts[k], raw_counts[old as usize]);
    }
    for (old, &c) in raw_counts.iter().enumerate() {
        if c == 0 {
            assert!(!map.new_to_old.contains(&(old as u32)));
        }
    }
}

#[test]
fn oov_decodes_through_the_bias() {
    let mut tok = LearnableTokenizer::seeded(16, 8, 3, true, 3).unwrap();
    let ts = recording();
    tok.refactorize(&ts.iter_channels().collect::<Vec<_>>()).unwrap();
    let oov = tok.refactor_map().unwrap().oov_label();
    let seq = TokenSequence::new(vec![oov; 5], 1, 5, tok.vocab_size(), "t").unwrap();
    let x = tok.detokenize(&seq, &SeriesMeta::new(100.0, 0)).unwrap();
    let bias: f64 = tok.biases().iter().sum();
    assert!(x.data().iter().all(|&v| v == bias));

    let wrong = TokenSequence::new(vec![0; 5], 1, 5, 16, "t").unwrap();
    assert!(matches!(tok.detokenize(&wrong, &SeriesMeta::new(100.0, 0)), Err(Error::VocabMismatch { .. })));
}

#[test]
fn channel_permutation_permutes_tokens() {
    let tok = LearnableTokenizer::seeded(16, 8, 3, false, 4).unwrap();
    let ts = recording();
    let rows: Vec<Vec<f64>> = ts.iter_channels().map(<[f64]>::to_vec).collect();
    let swapped = TimeSeries::from_channels(vec![rows[2].clone(), rows[0].clone(), rows[1].clone()], 100.0, 2).unwrap();
    let a = tok.tokenize(&ts).unwrap();
    let b = tok.tokenize(&swapped).unwrap();
    assert_eq!(a.channel(2), b.channel(0));
    assert_eq!(a.channel(0), b.channel(1));
    assert_eq!(a.channel(1), b.channel(2));
}

#[test]
fn save_and_load() {
    let (mut tok, _) = LearnableTokenizer::train(&tiny_segments(), &tiny_config(false)).unwrap();
    let ts = recording();
    tok.refactorize(&ts.iter_channels().collect::<Vec<_>>()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tok.json");
    tok.save(&path).unwrap();
    assert!(dir.path().join("tok.weights.json").exists());
    assert!(dir.path().join("tok.weights.bin").exists());
    let back = LearnableTokenizer::load(&path).unwrap();
    assert_eq!(back.refactor_map(), tok.refactor_map());
    assert_eq!(back.training_record(), tok.training_record());
    assert_eq!(back.name(), tok.name());
    for (a, b) in tok.params().iter().zip(back.params()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
}
