use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::params::layer_name;
use crate::model::{ModelConfig, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Element, Tensor};

/// Tape handles for every tensor of a [`ParamSet`].
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Records every parameter as a leaf, trainable or constant.
    pub fn record<T: Element>(tape: &mut Tape<T>, params: &ParamSet<T>, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing tensor {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub struct ForwardOutput<T> {
    /// `[batch, seq, vocab]`
    pub logits: Tensor<T>,
    pub loss: Option<f64>,
    pub flops_forward: u64,
}

/// Output of one forward+backward pass.
pub struct StepOutput<T> {
    pub loss: f64,
    pub grads: ParamSet<T>,
    pub forward_flops: u64,
    pub backward_flops: u64,
}

fn check_tokens(config: &ModelConfig, tokens: &[usize], batch: usize, seq: usize) -> Result<()> {
    if seq > config.max_seq {
        return Err(Error::SequenceTooLong {
            len: seq,
            max: config.max_seq,
        });
    }
    if tokens.len() != batch * seq {
        return Err(Error::Shape(format!(
            "{} tokens for batch {batch} x seq {seq}",
            tokens.len()
        )));
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= config.vocab) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab: config.vocab,
        });
    }
    Ok(())
}

/// Records the pre-norm decoder on `tape` and returns the `[batch*seq, vocab]`
/// logits:
///
/// ```text
/// h = emb[tokens] + pos_emb[positions]
/// per layer: h += Attn(LN1(h)); h += FFN(LN2(h))
/// logits = LNf(h) head
/// ```
pub fn build_logits<T: Element>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    config: &ModelConfig,
    tokens: &[usize],
    batch: usize,
    seq: usize,
) -> Result<Var> {
    check_tokens(config, tokens, batch, seq)?;
    let eps = config.layernorm_eps;
    let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
    let tok = tape.embedding(vars.get("emb")?, tokens)?;
    let pos = tape.embedding(vars.get("pos_emb")?, &positions)?;
    let mut h = tape.add(tok, pos)?;

    for l in 0..config.num_layers {
        let p = |local: &str| vars.get(&layer_name(l, local));
        let a = tape.layer_norm(h, p("ln1.w")?, p("ln1.b")?, eps)?;
        let q = tape.matmul(a, p("wq")?)?;
        let q = tape.add(q, p("bq")?)?;
        let k = tape.matmul(a, p("wk")?)?;
        let k = tape.add(k, p("bk")?)?;
        let v = tape.matmul(a, p("wv")?)?;
        let v = tape.add(v, p("bv")?)?;
        let att = tape.causal_attention(q, k, v, batch, seq, config.num_heads)?;
        let o = tape.matmul(att, p("wo")?)?;
        let o = tape.add(o, p("bo")?)?;
        h = tape.add(h, o)?;

        let a = tape.layer_norm(h, p("ln2.w")?, p("ln2.b")?, eps)?;
        let f = tape.matmul(a, p("fc1.w")?)?;
        let f = tape.add(f, p("fc1.b")?)?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, p("fc2.w")?)?;
        let f = tape.add(f, p("fc2.b")?)?;
        h = tape.add(h, f)?;
    }

    let hf = tape.layer_norm(h, vars.get("lnf.w")?, vars.get("lnf.b")?, eps)?;
    tape.matmul(hf, vars.get("head")?)
}

/// Gradient-free forward pass. `tokens` is `[batch, seq]` row-major.
pub fn forward<T: Element>(
    params: &ParamSet<T>,
    config: &ModelConfig,
    tokens: &[usize],
    batch: usize,
    seq: usize,
    targets: Option<&[usize]>,
) -> Result<ForwardOutput<T>> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, false);
    let logits = build_logits(&mut tape, &vars, config, tokens, batch, seq)?;
    let loss = match targets {
        Some(t) => {
            let l = tape.cross_entropy(logits, t)?;
            Some(tape.value(l).item()?.as_f64())
        }
        None => None,
    };
    let flops_forward = tape.forward_flops();
    let logits = tape
        .value(logits)
        .clone()
        .reshape(&[batch, seq, config.vocab])?;
    Ok(ForwardOutput {
        logits,
        loss,
        flops_forward,
    })
}

/// Mean cross-entropy loss and its gradient with respect to every parameter.
pub fn loss_and_grads<T: Element>(
    params: &ParamSet<T>,
    config: &ModelConfig,
    inputs: &[usize],
    targets: &[usize],
    batch: usize,
    seq: usize,
) -> Result<StepOutput<T>> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, params, true);
    let logits = build_logits(&mut tape, &vars, config, inputs, batch, seq)?;
    let loss_var = tape.cross_entropy(logits, targets)?;
    let loss = tape.value(loss_var).item()?.as_f64();
    let forward_flops = tape.forward_flops();
    let mut g = tape.backward(loss_var)?;
    let mut grads = ParamSet::new();
    for (name, &v) in vars.iter() {
        let t = g
            .take(v)
            .unwrap_or_else(|| Tensor::zeros(params.get(name).map(|t| t.shape()).unwrap_or(&[])));
        grads.insert(name.clone(), t);
    }
    Ok(StepOutput {
        loss,
        grads,
        forward_flops,
        backward_flops: tape.backward_flops(),
    })
}
