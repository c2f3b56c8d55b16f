mod common;

use common::{random_sample, reference_forward, rng, small_config};
use strats::data::{ObservationTriplet, TimeSeriesSample};
use strats::model::{
    cve_forward, demographics_embed, encode_contextual, forecast_head, fusion_attention,
    mha_forward, target_head, transformer_block, DemographicsParams, DenseParams, ForwardMode,
    FusionParams, ModelConfig, StratsModel,
};
use strats::numerics::{ParameterStore, Tape, Tensor};

const LN3: f64 = 1.098_612_288_668_109_8;

fn model(cfg: ModelConfig) -> StratsModel<f64> {
    StratsModel::new(cfg, 11).unwrap()
}

fn set(m: &mut StratsModel<f64>, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
    m.params_mut()
        .set_by_name(name, Tensor::matrix(rows, cols, data).unwrap())
        .unwrap();
}

fn zero(m: &mut StratsModel<f64>, name: &str) {
    let shape = m.params().get(name).unwrap().shape().to_vec();
    m.params_mut()
        .set_by_name(name, Tensor::zeros(&shape))
        .unwrap();
}

fn sample(triplets: &[(f64, usize, f64)], demographics: Vec<f64>) -> TimeSeriesSample {
    TimeSeriesSample {
        stay_id: "s".into(),
        patient_id: "p".into(),
        triplets: triplets
            .iter()
            .map(|&(t, f, v)| ObservationTriplet::new(t, f, v))
            .collect(),
        demographics,
        label: None,
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn cve_hidden_width_is_floor_sqrt() {
    for (d, k) in [(9, 3), (50, 7), (1, 1), (16, 4), (15, 3)] {
        let cfg = ModelConfig {
            d,
            n_heads: 1,
            ..ModelConfig::new(2, 1)
        };
        assert_eq!(cfg.cve_hidden(), k, "d = {d}");
        let m = model(cfg);
        assert_eq!(m.params().get("cve_value.u").unwrap().shape(), [k, d]);
    }
}

#[test]
fn cve_with_zero_output_weights_is_zero() {
    let mut m = model(ModelConfig {
        d: 9,
        n_heads: 3,
        ..ModelConfig::new(2, 1)
    });
    zero(&mut m, "cve_value.u");
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![-3.0, 0.0, 7.5])).unwrap();
    let y = cve_forward(&mut tape, m.params(), &m.layout().cve_value, x).unwrap();
    assert_eq!(tape.shape(y), [3, 9]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn cve_hand_example() {
    // d = 2 -> one hidden unit
    let mut m = model(ModelConfig {
        d: 2,
        n_heads: 1,
        ..ModelConfig::new(2, 1)
    });
    set(&mut m, "cve_time.w", 1, 1, vec![2.0]);
    set(&mut m, "cve_time.b", 1, 1, vec![-0.5]);
    set(&mut m, "cve_time.u", 1, 2, vec![1.0, -3.0]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::column(vec![0.5, 1.0])).unwrap();
    let y = cve_forward(&mut tape, m.params(), &m.layout().cve_time, x).unwrap();
    let h0 = (0.5f64).tanh();
    let h1 = (1.5f64).tanh();
    assert!(close(
        tape.value(y).data(),
        &[h0, -3.0 * h0, h1, -3.0 * h1],
        1e-12
    ));
}

fn block_model(d: usize, h: usize) -> StratsModel<f64> {
    model(ModelConfig {
        d,
        n_heads: h,
        n_blocks: 1,
        ..ModelConfig::new(2, 1)
    })
}

#[test]
fn attention_single_observation_is_one() {
    let m = block_model(8, 2);
    let mut tape = Tape::new();
    let e = tape
        .constant(Tensor::matrix(1, 8, (0..8).map(|i| i as f64 * 0.3).collect()).unwrap())
        .unwrap();
    let (out, attn) = mha_forward(&mut tape, m.params(), &m.layout().blocks[0], e, None).unwrap();
    assert_eq!(tape.shape(out), [1, 8]);
    for a in attn {
        assert_eq!(tape.value(a).data(), &[1.0]);
    }
}

#[test]
fn attention_identical_rows_is_uniform() {
    let m = block_model(8, 4);
    let row: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
    let mut tape = Tape::new();
    let e = tape
        .constant(Tensor::matrix(5, 8, row.repeat(5)).unwrap())
        .unwrap();
    let (_, attn) = mha_forward(&mut tape, m.params(), &m.layout().blocks[0], e, None).unwrap();
    for a in attn {
        assert!(tape
            .value(a)
            .data()
            .iter()
            .all(|&w| (w - 0.2).abs() < 1e-12));
    }
}

#[test]
fn attention_hand_example() {
    // one head, identity projections, d = 2
    let mut m = block_model(2, 1);
    for n in ["wq", "wk", "wv"] {
        set(
            &mut m,
            &format!("block0.head0.{n}"),
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
        );
    }
    set(&mut m, "block0.wc", 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    let mut tape = Tape::new();
    let e = tape
        .constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let (out, attn) = mha_forward(&mut tape, m.params(), &m.layout().blocks[0], e, None).unwrap();
    let z = (1.0 / 2f64.sqrt()).exp();
    let (hi, lo) = (z / (z + 1.0), 1.0 / (z + 1.0));
    assert!(close(tape.value(attn[0]).data(), &[hi, lo, lo, hi], 1e-12));
    assert!(close(tape.value(out).data(), &[hi, lo, lo, hi], 1e-12));
    for row in tape.value(attn[0]).data().chunks(2) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn layer_norm_rows(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|r| {
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            r.iter()
                .map(move |v| (v - mean) / (var + 1e-5).sqrt())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn block_with_silent_sublayers_is_double_layer_norm() {
    let mut m = block_model(4, 2);
    zero(&mut m, "block0.wc");
    zero(&mut m, "block0.ffn.w2");
    let data = vec![1.0, 2.0, 4.0, 8.0, -1.0, 0.5, 0.0, 3.0, 2.0, 2.0, 2.0, 2.5];
    let mut tape = Tape::new();
    let e = tape
        .constant(Tensor::matrix(3, 4, data.clone()).unwrap())
        .unwrap();
    let out = transformer_block(&mut tape, m.params(), &m.layout().blocks[0], e, None).unwrap();
    let expected = layer_norm_rows(&layer_norm_rows(&data, 4), 4);
    assert_eq!(tape.shape(out), [3, 4]);
    assert!(close(tape.value(out).data(), &expected, 1e-12));
}

#[test]
fn encoder_without_blocks_is_identity() {
    let m = model(ModelConfig {
        d: 4,
        n_heads: 2,
        n_blocks: 0,
        ..ModelConfig::new(2, 1)
    });
    let mut tape = Tape::new();
    let e = tape
        .constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap())
        .unwrap();
    let c = encode_contextual(&mut tape, m.params(), &m.layout().blocks, e, None).unwrap();
    assert_eq!(tape.value(c), tape.value(e));
}

#[test]
fn encoder_two_blocks_uses_four_layer_norms() {
    let m = model(small_config(3, 2));
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::filled(&[3, 8], 0.5)).unwrap();
    encode_contextual(&mut tape, m.params(), &m.layout().blocks, e, None).unwrap();
    assert_eq!(tape.count_ops("layer_norm"), 4);
}

#[test]
fn encoder_rejects_empty_input() {
    let m = model(small_config(3, 2));
    let mut tape = Tape::new();
    let e = tape.constant(Tensor::zeros(&[0, 8])).unwrap();
    assert!(encode_contextual(&mut tape, m.params(), &m.layout().blocks, e, None).is_err());
}

#[test]
fn encoder_is_permutation_equivariant() {
    let m = model(small_config(3, 2));
    let mut r = rng(5);
    let data: Vec<f64> = (0..5 * 8)
        .map(|_| rand::Rng::gen_range(&mut r, -1.0..1.0))
        .collect();
    let perm = [3usize, 0, 4, 1, 2];
    let permuted: Vec<f64> = perm
        .iter()
        .flat_map(|&i| data[i * 8..(i + 1) * 8].to_vec())
        .collect();
    let run = |d: Vec<f64>| {
        let mut tape = Tape::new();
        let e = tape.constant(Tensor::matrix(5, 8, d).unwrap()).unwrap();
        let c = encode_contextual(&mut tape, m.params(), &m.layout().blocks, e, None).unwrap();
        tape.value(c).data().to_vec()
    };
    let a = run(data);
    let b = run(permuted);
    for (k, &i) in perm.iter().enumerate() {
        assert!(close(&b[k * 8..(k + 1) * 8], &a[i * 8..(i + 1) * 8], 1e-12));
    }
}

fn fusion_store(w: f64, u: f64) -> (ParameterStore<f64>, FusionParams) {
    let mut s = ParameterStore::new();
    let p = FusionParams {
        w_a: s
            .insert("w_a", Tensor::matrix(1, 1, vec![w]).unwrap())
            .unwrap(),
        b_a: s.insert("b_a", Tensor::zeros(&[1, 1])).unwrap(),
        u_a: s
            .insert("u_a", Tensor::matrix(1, 1, vec![u]).unwrap())
            .unwrap(),
    };
    (s, p)
}

#[test]
fn fusion_weights_hand_example() {
    // a = u tanh(w c): rows c = 0 and c = 1 with u = ln3 / tanh(1) give a = (0, ln 3)
    let (s, p) = fusion_store(1.0, LN3 / 1f64.tanh());
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::column(vec![0.0, 1.0])).unwrap();
    let (pooled, alpha) = fusion_attention(&mut tape, &s, &p, c).unwrap();
    assert!(close(tape.value(alpha).data(), &[0.25, 0.75], 1e-12));
    assert!(close(tape.value(pooled).data(), &[0.75], 1e-12));
}

#[test]
fn fusion_single_and_identical_rows() {
    let m = model(small_config(3, 2));
    let mut tape = Tape::new();
    let c = tape
        .constant(Tensor::matrix(1, 8, vec![0.3; 8]).unwrap())
        .unwrap();
    let (pooled, alpha) = fusion_attention(&mut tape, m.params(), &m.layout().fusion, c).unwrap();
    assert_eq!(tape.value(alpha).data(), &[1.0]);
    assert_eq!(tape.value(pooled), tape.value(c));

    let c = tape.constant(Tensor::filled(&[4, 8], -0.7)).unwrap();
    let (pooled, alpha) = fusion_attention(&mut tape, m.params(), &m.layout().fusion, c).unwrap();
    assert!(tape
        .value(alpha)
        .data()
        .iter()
        .all(|&a| (a - 0.25).abs() < 1e-12));
    assert!(tape
        .value(pooled)
        .data()
        .iter()
        .all(|&v| (v + 0.7).abs() < 1e-12));
}

fn demo_params(m: &StratsModel<f64>) -> &DemographicsParams {
    m.layout().demographics.as_ref().unwrap()
}

#[test]
fn demographics_tower_zero_and_range() {
    let mut m = model(small_config(3, 2));
    let mut tape = Tape::new();
    let d = tape.constant(Tensor::row(vec![4.0, -2.5])).unwrap();
    let y = demographics_embed(&mut tape, m.params(), demo_params(&m), d).unwrap();
    assert_eq!(tape.shape(y), [1, 8]);
    assert!(tape.value(y).data().iter().all(|v| v.abs() < 1.0));
    zero(&mut m, "demographics.w2");
    let mut tape = Tape::new();
    let d = tape.constant(Tensor::row(vec![4.0, -2.5])).unwrap();
    let y = demographics_embed(&mut tape, m.params(), demo_params(&m), d).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn demographics_tower_hand_example() {
    // D = 2, d = 1: hidden width 2
    let mut m = model(ModelConfig {
        d: 1,
        n_heads: 1,
        ..ModelConfig::new(2, 2)
    });
    set(&mut m, "demographics.w1", 2, 2, vec![1.0, 0.0, 0.0, 1.0]);
    set(&mut m, "demographics.w2", 2, 1, vec![1.0, 1.0]);
    let mut tape = Tape::new();
    let d = tape.constant(Tensor::row(vec![0.5, -0.25])).unwrap();
    let y = demographics_embed(&mut tape, m.params(), demo_params(&m), d).unwrap();
    let expected = ((0.5f64).tanh() + (-0.25f64).tanh()).tanh();
    assert!((tape.value(y).data()[0] - expected).abs() < 1e-12);
}

fn head_inputs(tape: &mut Tape<f64>, d: usize) -> (strats::numerics::Var, strats::numerics::Var) {
    let a = tape
        .constant(Tensor::row((0..d).map(|i| i as f64 * 0.1).collect()))
        .unwrap();
    let b = tape
        .constant(Tensor::row((0..d).map(|i| 1.0 - i as f64 * 0.2).collect()))
        .unwrap();
    (a, b)
}

fn target_params(m: &StratsModel<f64>) -> &DenseParams {
    &m.layout().target
}

#[test]
fn target_head_probabilities() {
    let mut m = model(small_config(3, 2));
    zero(&mut m, "target.w_o");
    let mut tape = Tape::new();
    let (a, b) = head_inputs(&mut tape, 8);
    let logit = target_head(&mut tape, m.params(), target_params(&m), a, b).unwrap();
    assert_eq!(strats::numerics::sigmoid(tape.value(logit).data()[0]), 0.5);

    set(&mut m, "target.b_o", 1, 1, vec![LN3]);
    // parameter leaves are cached per tape, so start a new one
    let mut tape = Tape::new();
    let (a, b) = head_inputs(&mut tape, 8);
    let logit = target_head(&mut tape, m.params(), target_params(&m), a, b).unwrap();
    assert!((strats::numerics::sigmoid(tape.value(logit).data()[0]) - 0.75).abs() < 1e-12);
}

#[test]
fn target_head_is_monotone_in_a_positive_weight() {
    let mut m = model(small_config(3, 2));
    let mut w = vec![0.0; 16];
    w[9] = 1.5;
    set(&mut m, "target.w_o", 16, 1, w);
    let mut last = f64::NEG_INFINITY;
    for k in 0..10 {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::row(vec![0.2; 8])).unwrap();
        let mut series = vec![0.0; 8];
        series[1] = k as f64 * 0.3;
        let b = tape.constant(Tensor::row(series)).unwrap();
        let logit = target_head(&mut tape, m.params(), target_params(&m), a, b).unwrap();
        let p = strats::numerics::sigmoid(tape.value(logit).data()[0]);
        assert!(p > last);
        last = p;
    }
}

#[test]
fn forecast_head_shape_and_bias() {
    let mut m = model(small_config(5, 2));
    zero(&mut m, "forecast.w_s");
    set(&mut m, "forecast.b_s", 1, 5, vec![1.0, -2.0, 0.5, 0.0, 3.0]);
    let mut tape = Tape::new();
    let (a, b) = head_inputs(&mut tape, 8);
    let y = forecast_head(&mut tape, m.params(), &m.layout().forecast, a, b).unwrap();
    assert_eq!(tape.shape(y), [1, 5]);
    assert_eq!(tape.value(y).data(), &[1.0, -2.0, 0.5, 0.0, 3.0]);
}

#[test]
fn forward_matches_reference_implementation() {
    for interpretable in [false, true] {
        let cfg = ModelConfig {
            interpretable,
            ..small_config(6, 3)
        };
        let m = model(cfg);
        let mut r = rng(21);
        for n in [1, 2, 7, 20] {
            let s = random_sample(&mut r, n, 6, 3);
            let out = m.forward(&s, ForwardMode::Both).unwrap();
            let (logit, forecast, alpha) = reference_forward(&m, &s);
            assert!(
                (out.logit.unwrap() - logit).abs() < 1e-10,
                "interpretable = {interpretable}, n = {n}"
            );
            assert!(close(out.forecast.as_ref().unwrap(), &forecast, 1e-10));
            assert!(close(&out.attention_weights, &alpha, 1e-12));
        }
    }
}

#[test]
fn default_width_with_uneven_heads_matches_reference() {
    let cfg = ModelConfig::new(6, 3);
    assert_eq!((cfg.d, cfg.n_heads, cfg.head_dim()), (50, 4, 12));
    let m = model(cfg);
    assert_eq!(m.params().get("block0.wc").unwrap().shape(), &[48, 50]);
    let s = random_sample(&mut rng(22), 9, 6, 3);
    let out = m.forward(&s, ForwardMode::Both).unwrap();
    let (logit, forecast, _) = reference_forward(&m, &s);
    assert!((out.logit.unwrap() - logit).abs() < 1e-10);
    assert!(close(out.forecast.as_ref().unwrap(), &forecast, 1e-10));
}

#[test]
fn forward_is_deterministic_and_seeded() {
    let a = StratsModel::<f32>::new(small_config(4, 2), 3).unwrap();
    let b = StratsModel::<f32>::new(small_config(4, 2), 3).unwrap();
    let c = StratsModel::<f32>::new(small_config(4, 2), 4).unwrap();
    let s = random_sample(&mut rng(1), 9, 4, 2);
    let pa = a.forward(&s, ForwardMode::Both).unwrap();
    let pb = b.forward(&s, ForwardMode::Both).unwrap();
    let pc = c.forward(&s, ForwardMode::Both).unwrap();
    assert_eq!(pa.logit.unwrap().to_bits(), pb.logit.unwrap().to_bits());
    assert_ne!(pa.logit, pc.logit);
}

#[test]
fn interpretable_head_input_width() {
    let cfg = ModelConfig {
        interpretable: true,
        ..small_config(4, 3)
    };
    assert_eq!(cfg.head_input_dim(), 3 + 8);
    let m = model(cfg);
    assert_eq!(m.params().get("target.w_o_raw").unwrap().shape(), [11, 1]);
    assert!(m.params().get("demographics.w1").is_err());
    let out = m
        .forward(&random_sample(&mut rng(2), 4, 4, 3), ForwardMode::Target)
        .unwrap();
    assert_eq!(out.demographics_embedding.len(), 3);
    assert_eq!(out.time_series_embedding.len(), 8);
}

#[test]
fn forward_rejects_bad_samples() {
    let m = model(ModelConfig {
        max_observations: 3,
        ..small_config(4, 2)
    });
    assert!(m
        .forward(&sample(&[], vec![0.0, 0.0]), ForwardMode::Target)
        .is_err());
    assert!(m
        .forward(
            &sample(&[(0.0, 9, 1.0)], vec![0.0, 0.0]),
            ForwardMode::Target
        )
        .is_err());
    assert!(m
        .forward(&sample(&[(0.0, 1, 1.0)], vec![0.0]), ForwardMode::Target)
        .is_err());
    let long: Vec<(f64, usize, f64)> = (0..4).map(|i| (i as f64, 0, 1.0)).collect();
    assert!(m
        .forward(&sample(&long, vec![0.0, 0.0]), ForwardMode::Target)
        .is_err());
}

#[test]
fn contributions_reconstruct_the_logit() {
    let cfg = ModelConfig {
        interpretable: true,
        ..small_config(5, 2)
    };
    let m = StratsModel::<f32>::new(cfg, 8).unwrap();
    let mut r = rng(9);
    for n in [1, 3, 12] {
        let s = random_sample(&mut r, n, 5, 2);
        let rep = m.contribution_scores(&s).unwrap();
        assert_eq!(rep.observation_scores.len(), n);
        assert_eq!(rep.demographic_scores.len(), 2);
        assert!((rep.reconstructed_logit() - rep.logit).abs() < 1e-5);
    }
}

#[test]
fn contributions_single_observation_and_zero_demographics() {
    let cfg = ModelConfig {
        interpretable: true,
        ..small_config(5, 2)
    };
    let mut m = model(cfg);
    set(&mut m, "target.b_o", 1, 1, vec![0.3]);
    let s = sample(&[(0.4, 2, 1.5)], vec![0.0, 0.0]);
    let rep = m.contribution_scores(&s).unwrap();
    assert_eq!(rep.demographic_scores, vec![0.0, 0.0]);
    assert!((rep.observation_scores[0] + 0.3 - rep.logit).abs() < 1e-12);
    assert!((rep.probability - strats::numerics::sigmoid(rep.logit)).abs() < 1e-15);
}

#[test]
fn contributions_need_the_interpretable_variant() {
    let m = model(small_config(5, 2));
    assert!(m
        .contribution_scores(&random_sample(&mut rng(1), 3, 5, 2))
        .is_err());
}

#[test]
fn trunk_transfer_keeps_the_fresh_head() {
    let cfg = small_config(4, 2);
    let source = model(cfg.clone());
    let mut target = StratsModel::<f64>::new(cfg, 99).unwrap();
    let fresh = target.clone();
    target.copy_trunk_from(&source).unwrap();
    for (name, value) in target.params().iter() {
        if StratsModel::<f64>::is_head_param(name) {
            assert_eq!(value, fresh.params().get(name).unwrap(), "{name}");
        } else {
            assert_eq!(value, source.params().get(name).unwrap(), "{name}");
        }
    }
    let other = model(ModelConfig {
        d: 4,
        ..small_config(4, 2)
    });
    assert!(target.copy_trunk_from(&other).is_err());
}
