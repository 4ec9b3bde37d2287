mod common;

use common::{assert_close, rng, toy_encoder, uniform};
use mct::autograd::{Mode, Tape};
use mct::transformer::{
    argmax, mean_pool, scaled_dot_attention, ClassifierHead, Encoder, EncoderBlock, EncoderConfig,
    MultiHeadAttention,
};
use mct::{ParamStore, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn attend(q: Tensor<f64>, k: Tensor<f64>, v: Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut tape = Tape::new(Mode::Eval);
    let (q, k, v) = (tape.input(q), tape.input(k), tape.input(v));
    let (o, w) = scaled_dot_attention(&mut tape, q, k, v).unwrap();
    (tape.value(o).clone(), tape.value(w).clone())
}

#[test]
fn attention_hand_case() {
    let (o, w) = attend(
        t(&[1, 2], &[1.0, 0.0]),
        t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
        t(&[2, 1], &[1.0, 0.0]),
    );
    // softmax([1/√2, 0])
    let a = 1.0 / (1.0 + (-std::f64::consts::FRAC_1_SQRT_2).exp());
    assert_close(w.data(), &[a, 1.0 - a], 1e-12);
    assert_close(o.data(), &[a], 1e-12);
    // 0.66976…, quoted to four places as 0.6697
    assert!((a - 0.6697).abs() < 1e-4);
}

#[test]
fn attention_single_token_returns_v() {
    let v = uniform(&[1, 3], 1);
    let (o, _) = attend(uniform(&[1, 4], 2), uniform(&[1, 4], 3), v.clone());
    assert_eq!(o, v);
}

#[test]
fn attention_with_equal_v_rows() {
    let row = [0.25, -1.5, 3.0];
    let v = t(&[4, 3], &row.repeat(4));
    let (o, _) = attend(uniform(&[5, 2], 4), uniform(&[4, 2], 5), v);
    for r in o.data().chunks(3) {
        assert_close(r, &row, 1e-12);
    }
}

#[test]
fn attention_shape_mismatch() {
    let mut tape = Tape::<f64>::new(Mode::Eval);
    let q = tape.input(uniform(&[2, 3], 1));
    let k = tape.input(uniform(&[2, 4], 2));
    let v = tape.input(uniform(&[2, 1], 3));
    assert!(scaled_dot_attention(&mut tape, q, k, v).is_err());
}

/// Reference multi-head attention written as explicit loops.
fn mha_oracle(x: &Tensor<f64>, store: &ParamStore<f64>, name: &str, heads: usize) -> Vec<f64> {
    let (l, d) = (x.shape()[0], x.shape()[1]);
    let dk = d / heads;
    let w = |p: &str| store.get(&format!("{name}.{p}")).unwrap().value.clone();
    let (wq, wk, wv, wo, bo) = (w("wq.weight"), w("wk.weight"), w("wv.weight"), w("wo.weight"), w("wo.bias"));
    let proj = |m: &Tensor<f64>, i: usize, c: usize| -> f64 { (0..d).map(|k| x.at(&[i, k]) * m.at(&[k, c])).sum() };
    let mut concat = vec![0.0; l * d];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| cols.clone().map(|c| proj(&wq, i, c) * proj(&wk, j, c)).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                concat[i * d + c] = (0..l).map(|j| e[j] / z * proj(&wv, j, c)).sum();
            }
        }
    }
    let mut out = vec![0.0; l * d];
    for i in 0..l {
        for c in 0..d {
            out[i * d + c] = bo.data()[c] + (0..d).map(|k| concat[i * d + k] * wo.at(&[k, c])).sum::<f64>();
        }
    }
    out
}

fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    for (i, p) in store.params_mut().iter_mut().enumerate() {
        p.value = uniform(p.value.shape(), seed + i as u64);
    }
}

#[test]
fn mha_matches_loop_oracle() {
    for heads in [1, 2] {
        let mut store = ParamStore::<f64>::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 4, heads, &mut rng(1)).unwrap();
        randomize(&mut store, 10);
        let x = uniform(&[3, 4], 2);
        let mut tape = Tape::new(Mode::Eval);
        let xv = tape.input(x.reshape(&[1, 3, 4]).unwrap());
        let y = mha.forward(&mut tape, &store, xv).unwrap();
        assert_close(tape.value(y).data(), &mha_oracle(&x, &store, "a", heads), 1e-10);
    }
}

#[test]
fn attention_weights_are_convex() {
    let v = uniform(&[6, 3], 7);
    let (o, w) = attend(uniform(&[4, 5], 8).map(|x| 3.0 * x), uniform(&[6, 5], 9).map(|x| 3.0 * x), v.clone());
    for row in w.data().chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
    for c in 0..3 {
        let col: Vec<f64> = (0..6).map(|r| v.at(&[r, c])).collect();
        let (lo, hi) = (col.iter().cloned().fold(f64::INFINITY, f64::min), col.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        for r in 0..4 {
            let y = o.at(&[r, c]);
            assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }
    }
}

fn permute_tokens(x: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let d = x.shape()[2];
    let mut data = Vec::with_capacity(x.numel());
    for &p in perm {
        data.extend_from_slice(&x.data()[p * d..(p + 1) * d]);
    }
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn encode(enc: &Encoder, store: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new(Mode::Eval);
    let xv = tape.input(x.clone());
    let y = enc.forward(&mut tape, store, xv).unwrap();
    tape.value(y).clone()
}

fn classify(head: &ClassifierHead, store: &ParamStore<f64>, encoded: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new(Mode::Eval);
    let e = tape.input(encoded.clone());
    let y = head.forward(&mut tape, store, e).unwrap();
    tape.value(y).clone()
}

#[test]
fn zeroed_output_projections_make_identity_block() {
    let mut store = ParamStore::<f64>::new();
    let block = EncoderBlock::new(&mut store, "b", &toy_encoder(), &mut rng(3)).unwrap();
    for name in ["b.attn.wo.weight", "b.attn.wo.bias", "b.ff2.weight", "b.ff2.bias"] {
        store.get_mut(name).unwrap().value.fill(0.0);
    }
    let x = uniform(&[2, 5, 16], 4);
    let mut tape = Tape::new(Mode::Eval);
    let xv = tape.input(x.clone());
    let y = block.forward(&mut tape, &store, xv).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn duplicated_tokens_leave_logits_unchanged() {
    let mut store = ParamStore::<f64>::new();
    let head = ClassifierHead::new(&mut store, "head", 16, 8, 5, &mut rng(5)).unwrap();
    let x = uniform(&[1, 4, 16], 6);
    let doubled = Tensor::new(vec![1, 8, 16], [x.data(), x.data()].concat()).unwrap();
    assert_close(classify(&head, &store, &x).data(), classify(&head, &store, &doubled).data(), 1e-12);
}

#[test]
fn mean_pool_averages_tokens() {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.input(t(&[2, 2], &[1.0, 2.0, 3.0, 6.0]));
    let y = mean_pool(&mut tape, x).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 4.0]);
}

#[test]
fn argmax_tie_goes_to_lower_class() {
    // classes 2 and 5 (1-based) share the maximum
    let logits = [0.1f64, 0.8, -0.3, 0.2, 0.8];
    assert_eq!(argmax(&logits) + 1, 2);
}

#[test]
fn config_validation() {
    let bad = EncoderConfig {
        heads: 3,
        ..toy_encoder()
    };
    assert!(bad.validate().is_err());
    assert!(Encoder::new(&mut ParamStore::<f32>::new(), "e", &bad, &mut rng(0)).is_err());
    let bad = EncoderConfig {
        dropout: 1.0,
        ..toy_encoder()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permutation_law(seed in 0u64..1000, l in 2usize..9, perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cfg = EncoderConfig { depth: 2, ..toy_encoder() };
        let mut store = ParamStore::<f64>::new();
        let enc = Encoder::new(&mut store, "encoder", &cfg, &mut rng(seed)).unwrap();
        let head = ClassifierHead::new(&mut store, "head", 16, 8, 4, &mut rng(seed + 1)).unwrap();
        let mut perm: Vec<usize> = (0..l).collect();
        perm.shuffle(&mut rng(perm_seed));

        let x = uniform(&[1, l, 16], seed + 2);
        let y = encode(&enc, &store, &x);
        let y_perm = encode(&enc, &store, &permute_tokens(&x, &perm));
        let expected = permute_tokens(&y, &perm);
        for (a, b) in y_perm.data().iter().zip(expected.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        let la = classify(&head, &store, &y);
        let lb = classify(&head, &store, &y_perm);
        for (a, b) in la.data().iter().zip(lb.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }
}
