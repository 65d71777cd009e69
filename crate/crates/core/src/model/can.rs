//! The CAN backbone: feature encoder, context-aware gates and attention,
//! treatment-aware attention, isotonic (or dense) output head and the
//! optional propensity head.
//!
//! All layers run batched on a [`Tape`]. Token tensors are `[B, T, d]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{FeatureSchema, InstanceRecord, NormalizationParams, TreatmentKind};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, Variant};
use crate::model::isotonic::{isotonic_encode, outcome_from_levels};
use crate::tensor::Tensor;

/// Records per tape during inference.
pub const INFERENCE_CHUNK: usize = 512;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: rand::Rng + ?Sized>(params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: params.weight(format!("{name}.w"), &[fan_in, fan_out], rng),
            b: params.bias(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let b = tape.param(params, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }
}

/// ReLU between layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: rand::Rng + ?Sized>(params: &mut ParamStore, name: &str, input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamStore, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(tape, params, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// `1 + sigmoid(W [x; c] + b)` with one weight block per token position.
/// `w` is `[T, 2d, out]`, split on the tape into the token and condition halves.
#[derive(Clone, Debug)]
pub struct Gate {
    pub w: ParamId,
    pub b: ParamId,
    pub scalar: bool,
}

impl Gate {
    fn new(params: &mut ParamStore, name: &str, positions: usize, d: usize, scalar: bool, rng: &mut ChaCha8Rng) -> Self {
        let out = if scalar { 1 } else { d };
        Self {
            w: params.weight(format!("{name}.w"), &[positions, 2 * d, out], rng),
            b: params.bias(format!("{name}.b"), &[positions, out]),
            scalar,
        }
    }

    /// Returns `(gate, gate ⊙ x)`; the gate is broadcast to `[B, T, d]`.
    pub fn apply(&self, tape: &mut Tape, params: &ParamStore, x: Var, cond: Var) -> Result<(Var, Var)> {
        let d = *tape.shape(x).last().expect("token tensor");
        let w = tape.param(params, self.w);
        let wx = tape.slice(w, 1, 0, d)?;
        let wc = tape.slice(w, 1, d, d)?;
        let px = tape.matmul(x, wx)?;
        let pc = tape.matmul(cond, wc)?;
        let pre = tape.add(px, pc)?;
        let b = tape.param(params, self.b);
        let pre = tape.add_bias(pre, b)?;
        let s = tape.sigmoid(pre);
        let mut gate = tape.weighted_sum(&[(1.0, s)], 1.0)?;
        if self.scalar {
            gate = tape.concat(&vec![gate; d], 2)?;
        }
        let gated = tape.mul(gate, x)?;
        Ok((gate, gated))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

/// Scaled dot-product self-attention; heads are concatenated, no output projection.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: Vec<AttentionHead>,
    pub residual: bool,
}

impl Attention {
    fn new(params: &mut ParamStore, name: &str, d: usize, heads: usize, residual: bool, rng: &mut ChaCha8Rng) -> Self {
        let dh = d / heads;
        let heads = (0..heads)
            .map(|h| AttentionHead {
                q: Linear::new(params, &format!("{name}.h{h}.q"), d, dh, rng),
                k: Linear::new(params, &format!("{name}.h{h}.k"), d, dh, rng),
                v: Linear::new(params, &format!("{name}.h{h}.v"), d, dh, rng),
            })
            .collect();
        Self { heads, residual }
    }

    pub fn apply(&self, tape: &mut Tape, params: &ParamStore, x: Var) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = head.q.apply(tape, params, x)?;
            let k = head.k.apply(tape, params, x)?;
            let v = head.v.apply(tape, params, x)?;
            let scores = tape.scaled_dot(q, k)?;
            let weights = tape.softmax(scores)?;
            outs.push(tape.batch_matmul(weights, v)?);
        }
        let out = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 2)? };
        if self.residual {
            tape.add(out, x)
        } else {
            Ok(out)
        }
    }
}

/// Parameter handles, grouped by sub-network.
#[derive(Clone, Debug)]
struct Layout {
    merchant_cat: Vec<ParamId>,
    merchant_num: Option<(ParamId, ParamId)>,
    context_cat: Vec<ParamId>,
    context_num: Option<(ParamId, ParamId)>,
    treatment: (ParamId, ParamId),
    context_mlp: Option<Mlp>,
    gate_s: Option<Gate>,
    gate_t: Option<Gate>,
    att_ctx: Option<Attention>,
    dense: Option<Linear>,
    gate_tal: Gate,
    att_tal: Attention,
    head: Mlp,
    propensity: Option<Mlp>,
}

/// Batch tensors fed to the encoder.
#[derive(Clone, Debug)]
pub struct ModelInputs {
    batch: usize,
    merchant_cat: Vec<Vec<usize>>,
    merchant_num: Option<Tensor>,
    context_cat: Vec<Vec<usize>>,
    context_num: Option<Tensor>,
    treatment: Tensor,
    treatments: Vec<f64>,
}

impl ModelInputs {
    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }

    /// Normalized factual treatments.
    pub fn treatments(&self) -> &[f64] {
        &self.treatments
    }
}

/// Token sets from the feature encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncodedTokens {
    /// `[B, n_s, d]`
    pub merchant: Var,
    /// `[B, n_c, d]`; `None` when context is absent or removed.
    pub context: Option<Var>,
    /// `[B, 1, d]`
    pub treatment: Var,
}

/// Intermediate representations of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[B, n_s, d]`
    pub h_cal: Var,
    /// `[B, d]`, the input of the balancing losses.
    pub h_cal_pooled: Var,
    /// `[B, 1, d]`
    pub h_t: Var,
    /// `[B, d]`
    pub h_tal: Var,
    /// Nonnegative level weights `[B, M + 1]`; `None` for the dense-head ablation.
    pub v: Option<Var>,
    /// `[B, 1]`, CAN-U only.
    pub propensity: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct CanModel {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub normalization: NormalizationParams,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    params: ParamStore,
    layout: Layout,
}

fn repeat_token(tape: &mut Tape, x: Var, n: usize) -> Result<Var> {
    if n == 1 {
        Ok(x)
    } else {
        tape.concat(&vec![x; n], 1)
    }
}

fn concat_tokens(tape: &mut Tape, tokens: &[Var]) -> Result<Var> {
    if tokens.len() == 1 {
        Ok(tokens[0])
    } else {
        tape.concat(tokens, 1)
    }
}

impl CanModel {
    pub fn new(config: ModelConfig, schema: FeatureSchema, normalization: NormalizationParams, seed: u64) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        if schema.merchant_field_count() == 0 {
            return Err(Error::Schema("at least one merchant feature is required".into()));
        }
        if schema.treatment_kind == TreatmentKind::Binary && config.isotonic_m != 1 {
            return Err(Error::Config("binary treatment requires isotonic_m = 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = config.embedding_dim;
        let ab = config.ablations;
        let use_context = schema.has_context() && !ab.remove_context;
        let n_s = schema.merchant_field_count();
        let n_c = if use_context { schema.context_field_count() } else { 0 };
        let m1 = config.isotonic_m + 1;

        let merchant_cat = schema
            .merchant_categorical
            .iter()
            .map(|f| p.embedding(format!("enc.merchant.{}", f.name), f.cardinality, d, &mut rng))
            .collect();
        let n_mnum = schema.merchant_numeric.len();
        let merchant_num = (n_mnum > 0).then(|| {
            (
                p.weight("enc.merchant_num.w", &[n_mnum, 1, d], &mut rng),
                p.bias("enc.merchant_num.b", &[n_mnum, d]),
            )
        });
        let (context_cat, context_num) = if use_context {
            let cat = schema
                .context_categorical
                .iter()
                .map(|f| p.embedding(format!("enc.context.{}", f.name), f.cardinality, d, &mut rng))
                .collect();
            let n_cnum = schema.context_numeric.len();
            let num = (n_cnum > 0).then(|| {
                (
                    p.weight("enc.context_num.w", &[n_cnum, 1, d], &mut rng),
                    p.bias("enc.context_num.b", &[n_cnum, d]),
                )
            });
            (cat, num)
        } else {
            (Vec::new(), None)
        };
        let treatment = (p.weight("enc.treatment.w", &[1, 1, d], &mut rng), p.bias("enc.treatment.b", &[1, d]));

        let (context_mlp, gate_s, gate_t, att_ctx, dense) = if ab.replace_attention_with_dense {
            let dense = Linear::new(&mut p, "dense", (n_s + n_c) * d, n_s * d, &mut rng);
            (None, None, None, None, Some(dense))
        } else {
            let mlp = use_context.then(|| Mlp::new(&mut p, "context_mlp", n_c * d, &config.context_mlp_widths, d, &mut rng));
            let gate_s = Gate::new(&mut p, "gate_merchant", n_s, d, config.scalar_gates, &mut rng);
            let gate_t = Gate::new(&mut p, "gate_treatment", 1, d, config.scalar_gates, &mut rng);
            let att = Attention::new(&mut p, "attn_context", d, config.attention_heads, config.attention_residual, &mut rng);
            (mlp, Some(gate_s), Some(gate_t), Some(att), None)
        };
        let gate_tal = Gate::new(&mut p, "gate_tal", n_s, d, config.scalar_gates, &mut rng);
        let att_tal = Attention::new(&mut p, "attn_tal", d, config.attention_heads, config.attention_residual, &mut rng);
        let head = if ab.replace_isotonic_with_dense {
            Mlp::new(&mut p, "head", d + m1, &config.head_mlp_widths, 1, &mut rng)
        } else {
            Mlp::new(&mut p, "head", d, &config.head_mlp_widths, m1, &mut rng)
        };
        let propensity = (config.variant == Variant::CanU)
            .then(|| Mlp::new(&mut p, "propensity", d, &config.head_mlp_widths, 1, &mut rng));

        Ok(Self {
            config,
            schema,
            normalization,
            seed,
            params: p,
            layout: Layout {
                merchant_cat,
                merchant_num,
                context_cat,
                context_num,
                treatment,
                context_mlp,
                gate_s,
                gate_t,
                att_ctx,
                dense,
                gate_tal,
                att_tal,
                head,
                propensity,
            },
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn levels(&self) -> usize {
        self.config.isotonic_m
    }

    pub fn uses_context(&self) -> bool {
        self.layout.context_mlp.is_some() || !self.layout.context_cat.is_empty() || self.layout.context_num.is_some()
    }

    pub fn is_isotonic(&self) -> bool {
        !self.config.ablations.replace_isotonic_with_dense
    }

    fn dim(&self) -> usize {
        self.config.embedding_dim
    }

    /// Validates records against the schema and packs them into batch tensors.
    /// Treatments must already be normalized. Context columns are ignored
    /// when the model does not use context.
    pub fn inputs(&self, records: &[InstanceRecord]) -> Result<ModelInputs> {
        if records.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let s = &self.schema;
        let use_context = self.uses_context();
        let b = records.len();
        let mut merchant_cat = vec![Vec::with_capacity(b); s.merchant_categorical.len()];
        let mut context_cat = vec![Vec::with_capacity(b); if use_context { s.context_categorical.len() } else { 0 }];
        let mut mnum = Vec::with_capacity(b * s.merchant_numeric.len());
        let mut cnum = Vec::new();
        let mut treatments = Vec::with_capacity(b);
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            let check = |vals: &[usize], fields: &[crate::data::CategoricalField], out: &mut Vec<Vec<usize>>| -> Result<()> {
                if vals.len() != fields.len() {
                    return Err(Error::Schema(format!("row {row}: expected {} categorical values", fields.len())));
                }
                for ((v, f), col) in vals.iter().zip(fields).zip(out.iter_mut()) {
                    if *v >= f.cardinality {
                        return Err(Error::Oov {
                            row,
                            field: f.name.clone(),
                            value: *v as i64,
                            cardinality: f.cardinality,
                        });
                    }
                    col.push(*v);
                }
                Ok(())
            };
            check(&r.merchant_cat, &s.merchant_categorical, &mut merchant_cat)?;
            if r.merchant_num.len() != s.merchant_numeric.len() {
                return Err(Error::Schema(format!("row {row}: merchant numeric arity mismatch")));
            }
            mnum.extend_from_slice(&r.merchant_num);
            if use_context {
                check(&r.context_cat, &s.context_categorical, &mut context_cat)?;
                if r.context_num.len() != s.context_numeric.len() {
                    return Err(Error::Schema(format!("row {row}: context numeric arity mismatch")));
                }
                cnum.extend_from_slice(&r.context_num);
            }
            if !(0.0..=1.0).contains(&r.treatment) {
                return Err(Error::Contract(format!(
                    "row {row}: treatment {} is not normalized to [0, 1]",
                    r.treatment
                )));
            }
            treatments.push(r.treatment);
        }
        let n_mnum = s.merchant_numeric.len();
        let n_cnum = if use_context { s.context_numeric.len() } else { 0 };
        Ok(ModelInputs {
            batch: b,
            merchant_cat,
            merchant_num: (n_mnum > 0).then(|| Tensor::new(vec![b, n_mnum, 1], mnum)).transpose()?,
            context_cat,
            context_num: (n_cnum > 0).then(|| Tensor::new(vec![b, n_cnum, 1], cnum)).transpose()?,
            treatment: Tensor::new(vec![b, 1, 1], treatments.clone())?,
            treatments,
        })
    }

    fn encode_group(
        &self,
        tape: &mut Tape,
        tables: &[ParamId],
        levels: &[Vec<usize>],
        numeric: Option<(ParamId, ParamId)>,
        values: Option<&Tensor>,
        b: usize,
    ) -> Result<Option<Var>> {
        let d = self.dim();
        let mut tokens = Vec::new();
        for (table, idx) in tables.iter().zip(levels) {
            let t = tape.param(&self.params, *table);
            let rows = tape.select_rows(t, idx)?;
            tokens.push(tape.reshape(rows, &[b, 1, d])?);
        }
        if let (Some((w, bias)), Some(x)) = (numeric, values) {
            let x = tape.leaf(x.clone());
            let w = tape.param(&self.params, w);
            let bias = tape.param(&self.params, bias);
            let y = tape.matmul(x, w)?;
            tokens.push(tape.add_bias(y, bias)?);
        }
        if tokens.is_empty() {
            Ok(None)
        } else {
            concat_tokens(tape, &tokens).map(Some)
        }
    }

    /// Categorical fields look up their embedding row; numeric fields and the
    /// treatment map to `w x + b`.
    pub fn encode(&self, tape: &mut Tape, inputs: &ModelInputs) -> Result<EncodedTokens> {
        let l = &self.layout;
        let b = inputs.batch;
        let merchant = self
            .encode_group(tape, &l.merchant_cat, &inputs.merchant_cat, l.merchant_num, inputs.merchant_num.as_ref(), b)?
            .expect("schema has merchant fields");
        let context = self.encode_group(tape, &l.context_cat, &inputs.context_cat, l.context_num, inputs.context_num.as_ref(), b)?;
        let treatment = self
            .encode_group(tape, &[], &[], Some(l.treatment), Some(&inputs.treatment), b)?
            .expect("treatment token");
        Ok(EncodedTokens {
            merchant,
            context,
            treatment,
        })
    }

    /// `MLP(Flat(e_c))` as `[B, d]`; zeros when context is absent or removed.
    pub fn context_summary(&self, tape: &mut Tape, tokens: &EncodedTokens) -> Result<Var> {
        let b = tape.shape(tokens.merchant)[0];
        match (&self.layout.context_mlp, tokens.context) {
            (Some(mlp), Some(c)) => {
                let width = tape.value(c).len() / b;
                let flat = tape.reshape(c, &[b, width])?;
                mlp.apply(tape, &self.params, flat)
            }
            _ => Ok(tape.leaf(Tensor::zeros(&[b, self.dim()]))),
        }
    }

    /// Merchant-token gate `a_s` from each token and the context summary.
    /// Returns `(a_s, h_s)`.
    pub fn context_gate(&self, tape: &mut Tape, merchant: Var, summary: Var) -> Result<(Var, Var)> {
        let gate = self
            .layout
            .gate_s
            .as_ref()
            .ok_or_else(|| Error::Variant("context gate is replaced by the dense ablation".into()))?;
        let (b, n_s, d) = (tape.shape(merchant)[0], tape.shape(merchant)[1], self.dim());
        let s = tape.reshape(summary, &[b, 1, d])?;
        let cond = repeat_token(tape, s, n_s)?;
        gate.apply(tape, &self.params, merchant, cond)
    }

    /// Treatment-token gate `a_t`. Returns `(a_t, h_t)`.
    pub fn treatment_gate(&self, tape: &mut Tape, treatment: Var, summary: Var) -> Result<(Var, Var)> {
        let gate = self
            .layout
            .gate_t
            .as_ref()
            .ok_or_else(|| Error::Variant("treatment gate is replaced by the dense ablation".into()))?;
        let b = tape.shape(treatment)[0];
        let s = tape.reshape(summary, &[b, 1, self.dim()])?;
        gate.apply(tape, &self.params, treatment, s)
    }

    /// Returns `(h_cal [B, n_s, d], h_t [B, 1, d])`.
    pub fn context_aware_layer(&self, tape: &mut Tape, tokens: &EncodedTokens) -> Result<(Var, Var)> {
        let (b, n_s, d) = (tape.shape(tokens.merchant)[0], tape.shape(tokens.merchant)[1], self.dim());
        if let Some(dense) = &self.layout.dense {
            let mut seq = vec![tokens.merchant];
            seq.extend(tokens.context);
            let seq = concat_tokens(tape, &seq)?;
            let width = tape.value(seq).len() / b;
            let flat = tape.reshape(seq, &[b, width])?;
            let h = dense.apply(tape, &self.params, flat)?;
            let h = tape.relu(h);
            let h_cal = tape.reshape(h, &[b, n_s, d])?;
            return Ok((h_cal, tokens.treatment));
        }
        let summary = self.context_summary(tape, tokens)?;
        let (_, h_s) = self.context_gate(tape, tokens.merchant, summary)?;
        let mut seq = vec![h_s];
        seq.extend(tokens.context);
        let seq = concat_tokens(tape, &seq)?;
        let att = self.layout.att_ctx.as_ref().expect("attention present without dense ablation");
        let out = att.apply(tape, &self.params, seq)?;
        let h_cal = tape.slice(out, 1, 0, n_s)?;
        let (_, h_t) = self.treatment_gate(tape, tokens.treatment, summary)?;
        Ok((h_cal, h_t))
    }

    /// Treatment gate `alpha_tal` on each `h_cal` token, self-attention over
    /// `[gated h_cal; h_t]`, mean-pooled to `[B, d]`.
    pub fn treatment_aware_layer(&self, tape: &mut Tape, h_cal: Var, h_t: Var) -> Result<Var> {
        let n_s = tape.shape(h_cal)[1];
        let cond = repeat_token(tape, h_t, n_s)?;
        let (_, gated) = self.layout.gate_tal.apply(tape, &self.params, h_cal, cond)?;
        let seq = tape.concat(&[gated, h_t], 1)?;
        let out = self.layout.att_tal.apply(tape, &self.params, seq)?;
        tape.mean_pool(out, 1)
    }

    /// Level weights `v = softplus(MLP(h_tal))`, `[B, M + 1]`.
    pub fn isotonic_head(&self, tape: &mut Tape, h_tal: Var) -> Result<Var> {
        if !self.is_isotonic() {
            return Err(Error::Variant("model uses the dense outcome head".into()));
        }
        let logits = self.layout.head.apply(tape, &self.params, h_tal)?;
        Ok(tape.softplus(logits))
    }

    /// Dense-head outcome `MLP([h_tal; IE(t)])`, `[B, 1]`.
    fn dense_head(&self, tape: &mut Tape, h_tal: Var, ts: &[f64]) -> Result<Var> {
        let m = self.levels();
        let mut ie = Vec::with_capacity(ts.len() * (m + 1));
        for &t in ts {
            ie.extend(isotonic_encode(t, m)?);
        }
        let ie = tape.leaf(Tensor::new(vec![ts.len(), m + 1], ie)?);
        let x = tape.concat(&[h_tal, ie], 1)?;
        self.layout.head.apply(tape, &self.params, x)
    }

    fn forward_inner(&self, tape: &mut Tape, inputs: &ModelInputs, propensity_lambda: Option<f64>) -> Result<Forward> {
        let tokens = self.encode(tape, inputs)?;
        let (h_cal, h_t) = self.context_aware_layer(tape, &tokens)?;
        let h_cal_pooled = tape.mean_pool(h_cal, 1)?;
        let h_tal = self.treatment_aware_layer(tape, h_cal, h_t)?;
        let v = if self.is_isotonic() {
            Some(self.isotonic_head(tape, h_tal)?)
        } else {
            None
        };
        let propensity = match (&self.layout.propensity, propensity_lambda) {
            (Some(head), Some(lambda)) => {
                let r = tape.gradient_reversal(h_cal_pooled, lambda)?;
                let out = head.apply(tape, &self.params, r)?;
                Some(match self.schema.treatment_kind {
                    TreatmentKind::Binary => tape.sigmoid(out),
                    TreatmentKind::Continuous => out,
                })
            }
            _ => None,
        };
        Ok(Forward {
            h_cal,
            h_cal_pooled,
            h_t,
            h_tal,
            v,
            propensity,
        })
    }

    /// Full forward pass at the factual treatments. CAN-U also evaluates the
    /// propensity head behind a gradient reversal with weight `grl_lambda`.
    pub fn forward(&self, tape: &mut Tape, inputs: &ModelInputs, grl_lambda: f64) -> Result<Forward> {
        self.forward_inner(tape, inputs, Some(grl_lambda))
    }

    /// Predicted outcome at normalized treatments `ts`, `[B, 1]`.
    pub fn outcome_at(&self, tape: &mut Tape, fwd: &Forward, ts: &[f64]) -> Result<Var> {
        match fwd.v {
            Some(v) => {
                let m = self.levels();
                let mut mask = Vec::with_capacity(ts.len() * (m + 1));
                for &t in ts {
                    mask.extend(isotonic_encode(t, m)?);
                }
                self.masked_level_sum(tape, v, mask)
            }
            None => self.dense_head(tape, fwd.h_tal, ts),
        }
    }

    /// Predicted uplift from `t_f` to `t_cf`, `[B, 1]`: the signed segment sum
    /// of level weights, or the outcome difference for the dense head.
    pub fn uplift_between(&self, tape: &mut Tape, fwd: &Forward, t_f: &[f64], t_cf: &[f64]) -> Result<Var> {
        if t_f.len() != t_cf.len() {
            return Err(Error::shape("uplift_between", &[t_f.len()], &[t_cf.len()]));
        }
        match fwd.v {
            Some(v) => {
                let m = self.levels();
                let mut mask = Vec::with_capacity(t_f.len() * (m + 1));
                for (&a, &b) in t_f.iter().zip(t_cf) {
                    let (ea, eb) = (isotonic_encode(a, m)?, isotonic_encode(b, m)?);
                    mask.extend(eb.iter().zip(&ea).map(|(x, y)| x - y));
                }
                self.masked_level_sum(tape, v, mask)
            }
            None => {
                let cf = self.dense_head(tape, fwd.h_tal, t_cf)?;
                let f = self.dense_head(tape, fwd.h_tal, t_f)?;
                tape.weighted_sum(&[(1.0, cf), (-1.0, f)], 0.0)
            }
        }
    }

    fn masked_level_sum(&self, tape: &mut Tape, v: Var, mask: Vec<f64>) -> Result<Var> {
        let m1 = self.levels() + 1;
        let b = mask.len() / m1;
        let mask = tape.leaf(Tensor::new(vec![b, m1], mask)?);
        let masked = tape.mul(v, mask)?;
        let ones = tape.leaf(Tensor::full(&[m1, 1], 1.0));
        tape.matmul(masked, ones)
    }

    /// Outcomes of each record at several treatment vectors: `out[j][i]` is
    /// record `i` at `ts[j][i]`. Level weights come from the record's own
    /// (factual) treatment, so outcomes are monotone in `t` per record.
    pub fn predict_outcomes_at(&self, records: &[InstanceRecord], ts: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        for t in ts {
            if t.len() != records.len() {
                return Err(Error::shape("predict_outcomes_at", &[records.len()], &[t.len()]));
            }
        }
        let mut out = vec![Vec::with_capacity(records.len()); ts.len()];
        for (c, chunk) in records.chunks(INFERENCE_CHUNK).enumerate() {
            let lo = c * INFERENCE_CHUNK;
            let hi = lo + chunk.len();
            let mut tape = Tape::new();
            let inputs = self.inputs(chunk)?;
            let fwd = self.forward_inner(&mut tape, &inputs, None)?;
            match fwd.v {
                Some(v) => {
                    let m1 = self.levels() + 1;
                    let vals = tape.value(v).data();
                    for (j, t) in ts.iter().enumerate() {
                        for i in 0..chunk.len() {
                            out[j].push(outcome_from_levels(&vals[i * m1..(i + 1) * m1], t[lo + i]));
                        }
                    }
                }
                None => {
                    for (j, t) in ts.iter().enumerate() {
                        let y = self.dense_head(&mut tape, fwd.h_tal, &t[lo..hi])?;
                        out[j].extend_from_slice(tape.value(y).data());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn predict_outcome(&self, record: &InstanceRecord, t: f64) -> Result<f64> {
        Ok(self.predict_outcomes_at(std::slice::from_ref(record), &[&[t]])?[0][0])
    }

    /// `predict_outcome(t_cf) - predict_outcome(t_f)`, exactly.
    pub fn predict_uplift(&self, record: &InstanceRecord, t_f: f64, t_cf: f64) -> Result<f64> {
        let out = self.predict_outcomes_at(std::slice::from_ref(record), &[&[t_f], &[t_cf]])?;
        Ok(out[1][0] - out[0][0])
    }

    /// Uplift of each record from its factual treatment to `t_cf[i]`.
    pub fn predict_uplifts(&self, records: &[InstanceRecord], t_cf: &[f64]) -> Result<Vec<f64>> {
        let t_f: Vec<f64> = records.iter().map(|r| r.treatment).collect();
        let out = self.predict_outcomes_at(records, &[&t_f, t_cf])?;
        Ok(out[1].iter().zip(&out[0]).map(|(a, b)| a - b).collect())
    }

    /// Outcome of each record's counterfactual instance: the record with
    /// its treatment replaced by `ts[i]`, predicted at `ts[i]`. Level weights
    /// then come from `ts[i]` rather than the factual treatment.
    pub fn predict_instance_outcomes(&self, records: &[InstanceRecord], ts: &[f64]) -> Result<Vec<f64>> {
        if ts.len() != records.len() {
            return Err(Error::shape("predict_instance_outcomes", &[records.len()], &[ts.len()]));
        }
        let moved: Vec<InstanceRecord> = records
            .iter()
            .zip(ts)
            .map(|(r, &t)| InstanceRecord {
                treatment: t,
                ..r.clone()
            })
            .collect();
        Ok(self.predict_outcomes_at(&moved, &[ts])?.remove(0))
    }

    /// `y(X, t_to) - y(X, t_from)`, each outcome predicted on its own instance.
    pub fn predict_instance_uplifts(&self, records: &[InstanceRecord], t_from: &[f64], t_to: &[f64]) -> Result<Vec<f64>> {
        let to = self.predict_instance_outcomes(records, t_to)?;
        let from = self.predict_instance_outcomes(records, t_from)?;
        Ok(to.iter().zip(&from).map(|(b, a)| b - a).collect())
    }

    /// Level weights `v` per record, at the factual treatment.
    pub fn predict_levels(&self, records: &[InstanceRecord]) -> Result<Vec<Vec<f64>>> {
        if !self.is_isotonic() {
            return Err(Error::Variant("model uses the dense outcome head".into()));
        }
        let m1 = self.levels() + 1;
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let fwd = self.forward_inner(&mut tape, &self.inputs(chunk)?, None)?;
            let v = fwd.v.expect("isotonic head");
            out.extend(tape.value(v).data().chunks(m1).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Propensity head output per record (CAN-U only).
    pub fn predict_propensity(&self, records: &[InstanceRecord]) -> Result<Vec<f64>> {
        if self.layout.propensity.is_none() {
            return Err(Error::Variant("propensity head exists only on CAN-U".into()));
        }
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &self.inputs(chunk)?, 0.0)?;
            out.extend_from_slice(tape.value(fwd.propensity.expect("CAN-U head")).data());
        }
        Ok(out)
    }

    /// Mean-pooled `h_cal` per record, `[n, d]` row-major.
    pub fn pooled_representation(&self, records: &[InstanceRecord]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(records.len() * self.dim());
        for chunk in records.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let fwd = self.forward_inner(&mut tape, &self.inputs(chunk)?, None)?;
            data.extend_from_slice(tape.value(fwd.h_cal_pooled).data());
        }
        Tensor::matrix(records.len(), self.dim(), data)
    }
}
