#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strats::data::{ObservationTriplet, TimeSeriesSample};
use strats::model::{ModelConfig, StratsModel};

pub type Mat = Vec<Vec<f64>>;

pub fn small_config(n_variables: usize, n_demographics: usize) -> ModelConfig {
    ModelConfig {
        d: 8,
        n_blocks: 2,
        n_heads: 2,
        n_variables,
        n_demographics,
        ..ModelConfig::new(n_variables, n_demographics)
    }
}

/// A normalized-looking random sample with `n` triplets.
pub fn random_sample(
    rng: &mut ChaCha8Rng,
    n: usize,
    n_variables: usize,
    n_demographics: usize,
) -> TimeSeriesSample {
    let mut triplets: Vec<ObservationTriplet> = (0..n)
        .map(|_| {
            ObservationTriplet::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0..n_variables),
                rng.gen_range(-2.0..2.0),
            )
        })
        .collect();
    triplets.sort_by(ObservationTriplet::order_key);
    TimeSeriesSample {
        stay_id: "s".into(),
        patient_id: "p".into(),
        triplets,
        demographics: (0..n_demographics)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect(),
        label: Some(rng.gen_range(0..2)),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Plain nested-vector linear algebra, independent of the tape.

fn param(model: &StratsModel<f64>, name: &str) -> Mat {
    let t = model.params().get(name).unwrap();
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r)
        .map(|i| t.data()[i * c..(i + 1) * c].to_vec())
        .collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            for j in 0..m {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn add_row(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect())
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn map(a: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|&x| f(x)).collect())
        .collect()
}

fn softmax_rows(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        })
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn layer_norm(a: &Mat, g: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let s = (var + 1e-5).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, x)| (x - mean) / s * g[0][j] + b[0][j])
                .collect()
        })
        .collect()
}

fn cve(model: &StratsModel<f64>, prefix: &str, xs: &[f64]) -> Mat {
    let w = param(model, &format!("{prefix}.w"));
    let b = param(model, &format!("{prefix}.b"));
    let u = param(model, &format!("{prefix}.u"));
    let col: Mat = xs.iter().map(|&x| vec![x]).collect();
    mm(&map(&add_row(&mm(&col, &w), &b), f64::tanh), &u)
}

/// Evaluation-mode forward pass written out directly from the model
/// equations. Returns `(logit, forecast, fusion weights)`.
pub fn reference_forward(
    model: &StratsModel<f64>,
    s: &TimeSeriesSample,
) -> (f64, Vec<f64>, Vec<f64>) {
    let cfg = model.config();
    let table = param(model, "feature_embedding");
    let ef: Mat = s
        .triplets
        .iter()
        .map(|o| table[o.variable].clone())
        .collect();
    let ev = cve(
        model,
        "cve_value",
        &s.triplets.iter().map(|o| o.value).collect::<Vec<_>>(),
    );
    let et = cve(
        model,
        "cve_time",
        &s.triplets.iter().map(|o| o.time).collect::<Vec<_>>(),
    );
    let e = add(&add(&ef, &ev), &et);

    let mut c = e.clone();
    for b in 0..cfg.n_blocks {
        let p = |n: &str| param(model, &format!("block{b}.{n}"));
        let mut heads: Vec<Mat> = Vec::new();
        for h in 0..cfg.n_heads {
            let q = mm(&c, &p(&format!("head{h}.wq")));
            let k = mm(&c, &p(&format!("head{h}.wk")));
            let v = mm(&c, &p(&format!("head{h}.wv")));
            let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
            let a = softmax_rows(&map(&mm(&q, &transpose(&k)), |x| x * scale));
            heads.push(mm(&a, &v));
        }
        let concat: Mat = (0..c.len())
            .map(|i| heads.iter().flat_map(|h| h[i].clone()).collect())
            .collect();
        let mha = mm(&concat, &p("wc"));
        let x1 = layer_norm(&add(&c, &mha), &p("ln1.gain"), &p("ln1.bias"));
        let f = map(&add_row(&mm(&x1, &p("ffn.w1")), &p("ffn.b1")), |x| {
            x.max(0.0)
        });
        let f = add_row(&mm(&f, &p("ffn.w2")), &p("ffn.b2"));
        c = layer_norm(&add(&x1, &f), &p("ln2.gain"), &p("ln2.bias"));
    }

    let a = mm(
        &map(
            &add_row(
                &mm(&c, &param(model, "fusion.w_a")),
                &param(model, "fusion.b_a"),
            ),
            f64::tanh,
        ),
        &param(model, "fusion.u_a"),
    );
    let alpha = softmax_rows(&vec![a.iter().map(|r| r[0]).collect()]);
    let pooled_from = if cfg.interpretable { &e } else { &c };
    let series = mm(&alpha, pooled_from);
    let demo: Mat = vec![s.demographics.clone()];
    let demo_emb = if cfg.interpretable {
        demo
    } else {
        let h = map(
            &add_row(
                &mm(&demo, &param(model, "demographics.w1")),
                &param(model, "demographics.b1"),
            ),
            f64::tanh,
        );
        map(
            &add_row(
                &mm(&h, &param(model, "demographics.w2")),
                &param(model, "demographics.b2"),
            ),
            f64::tanh,
        )
    };
    let x: Mat = vec![demo_emb[0].iter().chain(&series[0]).cloned().collect()];
    let (wo, ws) = if cfg.interpretable {
        ("target.w_o_raw", "forecast.w_s_raw")
    } else {
        ("target.w_o", "forecast.w_s")
    };
    let logit = add_row(&mm(&x, &param(model, wo)), &param(model, "target.b_o"))[0][0];
    let forecast = add_row(&mm(&x, &param(model, ws)), &param(model, "forecast.b_s"))[0].clone();
    (logit, forecast, alpha[0].clone())
}
