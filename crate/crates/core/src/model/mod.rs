//! The triplet Transformer: embeddings, encoder, fusion attention, heads,
//! and the interpretable variant's contribution scores.

mod config;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use config::ModelConfig;
pub use layers::{
    cve_forward, demographics_embed, dense, encode_contextual, forecast_head, fusion_attention,
    fusion_weights, mha_forward, target_head, transformer_block, AttentionHeadParams, BlockParams,
    CveParams, DemographicsParams, DenseParams, FusionParams, Stochastic, MASKED_LOGIT,
};

use crate::data::TimeSeriesSample;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, ParamId, ParameterStore, Scalar, Tape, Tensor, Var};
use layers::{feature_embedding_init, Registrar};

/// Parameter-name prefixes of the task heads; everything else is trunk.
pub const HEAD_PREFIXES: [&str; 2] = ["target.", "forecast."];

/// Parameter ids of every layer, resolved once per store.
#[derive(Clone, Debug)]
pub struct Layout {
    pub feature_embedding: ParamId,
    pub cve_value: CveParams,
    pub cve_time: CveParams,
    pub blocks: Vec<BlockParams>,
    pub fusion: FusionParams,
    /// Absent in the interpretable variant.
    pub demographics: Option<DemographicsParams>,
    pub target: DenseParams,
    pub forecast: DenseParams,
}

impl Layout {
    fn build<T: Scalar>(r: &mut Registrar<T>, cfg: &ModelConfig) -> Result<Self> {
        let feature_embedding = r.param(
            "feature_embedding",
            cfg.n_variables,
            cfg.d,
            feature_embedding_init(),
        )?;
        let cve_value = CveParams::register(r, "cve_value", cfg)?;
        let cve_time = CveParams::register(r, "cve_time", cfg)?;
        let blocks = (0..cfg.n_blocks)
            .map(|b| BlockParams::register(r, &format!("block{b}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let fusion = FusionParams::register(r, cfg)?;
        let demographics = if cfg.interpretable {
            None
        } else {
            Some(DemographicsParams::register(r, cfg)?)
        };
        let head_in = cfg.head_input_dim();
        // the two variants use different head widths, so they get distinct names
        let (tw, fw) = if cfg.interpretable {
            ("w_o_raw", "w_s_raw")
        } else {
            ("w_o", "w_s")
        };
        let target = DenseParams::register(r, "target", head_in, 1, tw, "b_o")?;
        let forecast = DenseParams::register(r, "forecast", head_in, cfg.n_variables, fw, "b_s")?;
        Ok(Self {
            feature_embedding,
            cve_value,
            cve_time,
            blocks,
            fusion,
            demographics,
            target,
            forecast,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForwardMode {
    Target,
    Forecast,
    Both,
}

impl ForwardMode {
    fn target(self) -> bool {
        matches!(self, ForwardMode::Target | ForwardMode::Both)
    }

    fn forecast(self) -> bool {
        matches!(self, ForwardMode::Forecast | ForwardMode::Both)
    }
}

/// Tape handles of the intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub initial_embeddings: Var,
    pub contextual_embeddings: Var,
    pub attention: Var,
    pub series_embedding: Var,
    pub demographics_embedding: Var,
    pub logit: Option<Var>,
    pub forecast: Option<Var>,
}

/// Values produced by one forward pass.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelOutput {
    pub logit: Option<f64>,
    pub target_probability: Option<f64>,
    pub forecast: Option<Vec<f64>>,
    pub time_series_embedding: Vec<f64>,
    pub demographics_embedding: Vec<f64>,
    /// Fusion attention weight of each observation.
    pub attention_weights: Vec<f64>,
}

/// Additive decomposition of the interpretable variant's logit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContributionReport {
    /// `w_o[j] · d[j]` per demographic.
    pub demographic_scores: Vec<f64>,
    /// `Σ_j α_i · w_o[D + j] · e_i[j]` per observation, input order.
    pub observation_scores: Vec<f64>,
    pub bias: f64,
    pub logit: f64,
    pub probability: f64,
}

impl ContributionReport {
    /// `Σ scores + b_o`, which equals the logit up to rounding.
    pub fn reconstructed_logit(&self) -> f64 {
        self.demographic_scores.iter().sum::<f64>()
            + self.observation_scores.iter().sum::<f64>()
            + self.bias
    }
}

/// Model configuration, weights, and resolved layout.
#[derive(Clone, Debug)]
pub struct StratsModel<T: Scalar> {
    config: ModelConfig,
    params: ParameterStore<T>,
    layout: Layout,
}

impl<T: Scalar> StratsModel<T> {
    /// Freshly initialized model; initialization is a pure function of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::build(
            &mut Registrar::Create {
                store: &mut params,
                rng: &mut rng,
            },
            &config,
        )?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Wraps existing weights, checking every expected parameter and shape.
    pub fn from_params(config: ModelConfig, params: ParameterStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&mut Registrar::Lookup { store: &params }, &config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> StratsModel<U> {
        StratsModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn is_head_param(name: &str) -> bool {
        HEAD_PREFIXES.iter().any(|p| name.starts_with(p))
    }

    /// Copies every trunk parameter from `source`; task heads and optimizer
    /// state are left untouched.
    pub fn copy_trunk_from(&mut self, source: &StratsModel<T>) -> Result<()> {
        if source.config != self.config {
            return Err(Error::Model(format!(
                "cannot transfer weights between configs {} and {}",
                source.config.fingerprint(),
                self.config.fingerprint()
            )));
        }
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            if !Self::is_head_param(&name) {
                let value = source.params.get(&name)?.clone();
                self.params.set(id, value)?;
            }
        }
        Ok(())
    }

    fn check_sample(&self, sample: &TimeSeriesSample) -> Result<()> {
        let n = sample.triplets.len();
        if n == 0 {
            return Err(Error::Model(format!(
                "stay `{}` has no observations",
                sample.stay_id
            )));
        }
        if n > self.config.max_observations {
            return Err(Error::Model(format!(
                "stay `{}` has {n} observations, more than max_observations = {}",
                sample.stay_id, self.config.max_observations
            )));
        }
        if sample.demographics.len() != self.config.n_demographics {
            return Err(Error::Model(format!(
                "expected {} demographics, got {}",
                self.config.n_demographics,
                sample.demographics.len()
            )));
        }
        if let Some(o) = sample
            .triplets
            .iter()
            .find(|o| o.variable >= self.config.n_variables)
        {
            return Err(Error::Model(format!(
                "variable index {} out of range",
                o.variable
            )));
        }
        Ok(())
    }

    /// Sum of feature, value, and time embeddings for every triplet (`[n, d]`).
    pub fn initial_embeddings(&self, tape: &mut Tape<T>, sample: &TimeSeriesSample) -> Result<Var> {
        let times: Vec<T> = sample
            .triplets
            .iter()
            .map(|o| T::from_f64_lossy(o.time))
            .collect();
        let values: Vec<T> = sample
            .triplets
            .iter()
            .map(|o| T::from_f64_lossy(o.value))
            .collect();
        let vars: Vec<usize> = sample.triplets.iter().map(|o| o.variable).collect();
        let table = tape.param(&self.params, self.layout.feature_embedding)?;
        let ef = tape.gather_rows(table, &vars)?;
        let v = tape.constant(Tensor::column(values))?;
        let ev = cve_forward(tape, &self.params, &self.layout.cve_value, v)?;
        let t = tape.constant(Tensor::column(times))?;
        let et = cve_forward(tape, &self.params, &self.layout.cve_time, t)?;
        let e = tape.add(ef, ev)?;
        Ok(tape.add(e, et)?)
    }

    /// Records the forward pass for a normalized sample on `tape`.
    /// `train = None` runs in evaluation mode (no dropout).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        sample: &TimeSeriesSample,
        mode: ForwardMode,
        train: Option<&mut Stochastic<'_>>,
    ) -> Result<ForwardVars> {
        self.check_sample(sample)?;
        let p = &self.params;
        let e = self.initial_embeddings(tape, sample)?;
        let c = encode_contextual(tape, p, &self.layout.blocks, e, train)?;
        let alpha = fusion_weights(tape, p, &self.layout.fusion, c)?;
        let demo: Vec<T> = sample
            .demographics
            .iter()
            .map(|&v| T::from_f64_lossy(v))
            .collect();
        let demo = tape.constant(Tensor::row(demo))?;
        let (series, demo_embedding) = if self.config.interpretable {
            (tape.matmul(alpha, e)?, demo)
        } else {
            let dp = self
                .layout
                .demographics
                .as_ref()
                .expect("non-interpretable layout");
            (
                tape.matmul(alpha, c)?,
                demographics_embed(tape, p, dp, demo)?,
            )
        };
        let logit = if mode.target() {
            Some(target_head(
                tape,
                p,
                &self.layout.target,
                demo_embedding,
                series,
            )?)
        } else {
            None
        };
        let forecast = if mode.forecast() {
            Some(forecast_head(
                tape,
                p,
                &self.layout.forecast,
                demo_embedding,
                series,
            )?)
        } else {
            None
        };
        Ok(ForwardVars {
            initial_embeddings: e,
            contextual_embeddings: c,
            attention: alpha,
            series_embedding: series,
            demographics_embedding: demo_embedding,
            logit,
            forecast,
        })
    }

    /// Evaluation-mode forward pass on a normalized sample.
    pub fn forward(&self, sample: &TimeSeriesSample, mode: ForwardMode) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let vars = self.forward_on_tape(&mut tape, sample, mode, None)?;
        let logit = vars.logit.map(|l| tape.value(l).to_f64_vec()[0]);
        Ok(ModelOutput {
            logit,
            target_probability: logit.map(sigmoid),
            forecast: vars.forecast.map(|f| tape.value(f).to_f64_vec()),
            time_series_embedding: tape.value(vars.series_embedding).to_f64_vec(),
            demographics_embedding: tape.value(vars.demographics_embedding).to_f64_vec(),
            attention_weights: tape.value(vars.attention).to_f64_vec(),
        })
    }

    /// Exact logit decomposition of the interpretable variant.
    pub fn contribution_scores(&self, sample: &TimeSeriesSample) -> Result<ContributionReport> {
        if !self.config.interpretable {
            return Err(Error::Model(
                "contribution scores need the interpretable variant".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.forward_on_tape(&mut tape, sample, ForwardMode::Target, None)?;
        let logit = tape.value(vars.logit.expect("target mode")).to_f64_vec()[0];
        let alpha = tape.value(vars.attention).to_f64_vec();
        let e = tape.value(vars.initial_embeddings);
        let w_o = self.params.value(self.layout.target.w).to_f64_vec();
        let bias = self.params.value(self.layout.target.b).to_f64_vec()[0];
        let dd = self.config.n_demographics;
        let demographic_scores = sample
            .demographics
            .iter()
            .zip(&w_o[..dd])
            .map(|(d, w)| w * T::from_f64_lossy(*d).to_f64().unwrap_or(f64::NAN))
            .collect();
        let observation_scores = (0..e.rows())
            .map(|i| {
                let row = e.row_slice(i);
                let dot: f64 = row
                    .iter()
                    .zip(&w_o[dd..])
                    .map(|(x, w)| x.to_f64().unwrap_or(f64::NAN) * w)
                    .sum();
                alpha[i] * dot
            })
            .collect();
        Ok(ContributionReport {
            demographic_scores,
            observation_scores,
            bias,
            logit,
            probability: sigmoid(logit),
        })
    }
}
