//! The bundled reference backend: a small pre-norm transformer trained from
//! scratch. Parameters are partitioned into embeddings, encoder, decoder and
//! output head so encoder-only fine-tuning can freeze the rest.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use super::nn::{log_softmax_last, positions, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore, NEG_INF};
use super::{ClassifierModel, GroupState, ParameterGroup, Seq2SeqModel, SeqPair, Trainable};
use crate::error::{QuistError, Result};
use crate::question_typing::QuestionType;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ff: 512,
            max_source_len: 256,
            max_target_len: 48,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

struct EncoderLayer {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

struct Encoder {
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
}

impl Encoder {
    fn new(store: &mut ParamStore, cfg: &TransformerConfig) -> Result<Self> {
        let g = ParameterGroup::Encoder;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                Ok(EncoderLayer {
                    attn_norm: LayerNorm::new(store, &format!("{p}.attn_norm"), g, cfg.d_model)?,
                    attn: MultiHeadAttention::new(store, &format!("{p}.attn"), g, cfg.d_model, cfg.n_heads)?,
                    ff_norm: LayerNorm::new(store, &format!("{p}.ff_norm"), g, cfg.d_model)?,
                    ff: FeedForward::new(store, &format!("{p}.ff"), g, cfg.d_model, cfg.d_ff)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            final_norm: LayerNorm::new(store, "encoder.final_norm", g, cfg.d_model)?,
        })
    }

    fn forward(&self, mut x: Tensor, key_bias: &Tensor) -> Result<Tensor> {
        for layer in &self.layers {
            let h = layer.attn_norm.forward(&x)?;
            x = (x + layer.attn.forward(&h, &h, Some(key_bias))?)?;
            let h = layer.ff_norm.forward(&x)?;
            x = (x + layer.ff.forward(&h)?)?;
        }
        self.final_norm.forward(&x)
    }
}

struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

struct Decoder {
    layers: Vec<DecoderLayer>,
    final_norm: LayerNorm,
}

impl Decoder {
    fn new(store: &mut ParamStore, cfg: &TransformerConfig) -> Result<Self> {
        let g = ParameterGroup::Decoder;
        let d = cfg.d_model;
        let layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("decoder.layer{i}");
                Ok(DecoderLayer {
                    self_norm: LayerNorm::new(store, &format!("{p}.self_norm"), g, d)?,
                    self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), g, d, cfg.n_heads)?,
                    cross_norm: LayerNorm::new(store, &format!("{p}.cross_norm"), g, d)?,
                    cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), g, d, cfg.n_heads)?,
                    ff_norm: LayerNorm::new(store, &format!("{p}.ff_norm"), g, d)?,
                    ff: FeedForward::new(store, &format!("{p}.ff"), g, d, cfg.d_ff)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            final_norm: LayerNorm::new(store, "decoder.final_norm", g, d)?,
        })
    }

    fn forward(&self, mut x: Tensor, memory: &Tensor, causal: &Tensor, memory_bias: &Tensor) -> Result<Tensor> {
        for layer in &self.layers {
            let h = layer.self_norm.forward(&x)?;
            x = (x + layer.self_attn.forward(&h, &h, Some(causal))?)?;
            let h = layer.cross_norm.forward(&x)?;
            x = (x + layer.cross_attn.forward(&h, memory, Some(memory_bias))?)?;
            let h = layer.ff_norm.forward(&x)?;
            x = (x + layer.ff.forward(&h)?)?;
        }
        self.final_norm.forward(&x)
    }
}

/// Token embeddings plus fixed sinusoidal positions.
struct Embedder {
    table: Tensor,
    positions: Tensor,
}

impl Embedder {
    fn new(store: &mut ParamStore, vocab: usize, cfg: &TransformerConfig) -> Result<Self> {
        let max_len = cfg.max_source_len.max(cfg.max_target_len + 1);
        Ok(Self {
            table: store.normal("embeddings.tokens".into(), ParameterGroup::Embeddings, &[vocab, cfg.d_model], 1.0)?,
            positions: positions(max_len, cfg.d_model, store.device())?,
        })
    }

    fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        let d = self.table.dim(1)?;
        let x = self.table.index_select(&ids.flatten_all()?, 0)?.reshape((b, t, d))?;
        Ok(x.broadcast_add(&self.positions.narrow(0, 0, t)?)?)
    }
}

/// Right-pads `rows` with `pad`; returns ids `[batch, len]` and a float mask
/// with 1 for real tokens.
fn pad_batch(rows: &[&[TokenId]], pad: TokenId, device: &Device) -> Result<(Tensor, Vec<f32>, usize)> {
    let len = rows.iter().map(|r| r.len()).max().unwrap_or(0).max(1);
    let mut ids = Vec::with_capacity(rows.len() * len);
    let mut mask = Vec::with_capacity(rows.len() * len);
    for r in rows {
        for i in 0..len {
            ids.push(r.get(i).copied().unwrap_or(pad));
            mask.push(if i < r.len() { 1.0 } else { 0.0 });
        }
    }
    Ok((Tensor::from_vec(ids, (rows.len(), len), device)?, mask, len))
}

/// Additive key mask `[batch, 1, 1, len]`.
fn key_bias(mask: &[f32], batch: usize, len: usize, device: &Device) -> Result<Tensor> {
    let bias: Vec<f32> = mask.iter().map(|&m| if m > 0.0 { 0.0 } else { NEG_INF }).collect();
    Ok(Tensor::from_vec(bias, (batch, 1, 1, len), device)?)
}

fn causal_bias(len: usize, device: &Device) -> Result<Tensor> {
    let data: Vec<f32> = (0..len)
        .flat_map(|i| (0..len).map(move |j| if j <= i { 0.0 } else { NEG_INF }))
        .collect();
    Ok(Tensor::from_vec(data, (len, len), device)?)
}

/// Per-position negative log-likelihood of `targets` under `logits`
/// `[n, vocab]`.
fn token_nll(logits: &Tensor, targets: &[TokenId], device: &Device) -> Result<Tensor> {
    let n = targets.len();
    let idx = Tensor::from_vec(targets.to_vec(), (n, 1), device)?;
    Ok(log_softmax_last(logits)?.gather(&idx, 1)?.squeeze(1)?.neg()?)
}

fn masked_mean(values: &Tensor, mask: &[f32], device: &Device) -> Result<Tensor> {
    let count: f32 = mask.iter().sum();
    let m = Tensor::from_vec(mask.to_vec(), mask.len(), device)?;
    Ok(((values * m)?.sum_all()? / count.max(1.0) as f64)?)
}

/// Shared training plumbing: the store, the trainable set, and an optimizer
/// over exactly the trainable variables.
struct TrainState {
    store: ParamStore,
    owned: Vec<ParameterGroup>,
    trainable: BTreeSet<ParameterGroup>,
    optimizer: Option<AdamW>,
    weight_decay: f64,
    steps: u64,
}

impl TrainState {
    fn new(store: ParamStore, owned: Vec<ParameterGroup>, weight_decay: f64) -> Self {
        let trainable = owned.iter().copied().collect();
        Self {
            store,
            owned,
            trainable,
            optimizer: None,
            weight_decay,
            steps: 0,
        }
    }

    fn set_trainable(&mut self, groups: &BTreeSet<ParameterGroup>) -> Result<()> {
        if let Some(g) = groups.iter().find(|g| !self.owned.contains(g)) {
            return Err(QuistError::Argument(format!("model has no {g} group")));
        }
        self.trainable = groups.clone();
        self.optimizer = None;
        Ok(())
    }

    fn step(&mut self, loss: &Tensor, learning_rate: f64) -> Result<()> {
        self.steps += 1;
        if self.trainable.is_empty() {
            return Ok(());
        }
        if self.optimizer.is_none() {
            let groups: Vec<_> = self.trainable.iter().copied().collect();
            let params = ParamsAdamW {
                lr: learning_rate,
                weight_decay: self.weight_decay,
                ..Default::default()
            };
            self.optimizer = Some(AdamW::new(self.store.vars_in(&groups), params)?);
        }
        let opt = self.optimizer.as_mut().expect("initialized above");
        opt.set_learning_rate(learning_rate);
        opt.backward_step(loss)?;
        Ok(())
    }

    fn group_states(&self) -> Vec<GroupState> {
        self.owned
            .iter()
            .map(|&g| GroupState {
                name: g,
                trainable: self.trainable.contains(&g),
                parameters: self.store.count(g),
            })
            .collect()
    }
}

pub type Snapshot = BTreeMap<String, Tensor>;

pub struct TransformerSeq2Seq {
    config: TransformerConfig,
    tokenizer: Tokenizer,
    embedder: Embedder,
    encoder: Encoder,
    decoder: Decoder,
    head: Linear,
    state: TrainState,
}

/// Encoder output for one source, reused across decoding steps.
pub struct EncodedSource {
    memory: Tensor,
}

impl TransformerSeq2Seq {
    pub fn new(config: TransformerConfig, tokenizer: Tokenizer) -> Result<Self> {
        let mut store = ParamStore::new(config.seed);
        let embedder = Embedder::new(&mut store, tokenizer.vocab_size(), &config)?;
        let encoder = Encoder::new(&mut store, &config)?;
        let decoder = Decoder::new(&mut store, &config)?;
        let head = Linear::new(&mut store, "head.output", ParameterGroup::Head, config.d_model, tokenizer.vocab_size())?;
        let state = TrainState::new(store, ParameterGroup::ALL.to_vec(), config.weight_decay);
        Ok(Self {
            config,
            tokenizer,
            embedder,
            encoder,
            decoder,
            head,
            state,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.state.store
    }

    pub(crate) fn set_steps(&mut self, steps: u64) {
        self.state.steps = steps;
    }

    fn device(&self) -> &Device {
        self.state.store.device()
    }

    fn encode(&self, sources: &[&[TokenId]]) -> Result<(Tensor, Tensor)> {
        let pad = self.tokenizer.special().pad;
        let (ids, mask, len) = pad_batch(sources, pad, self.device())?;
        let bias = key_bias(&mask, sources.len(), len, self.device())?;
        let memory = self.encoder.forward(self.embedder.forward(&ids)?, &bias)?;
        Ok((memory, bias))
    }

    /// Decoder logits `[batch, len, vocab]` for decoder inputs (start token
    /// already prepended).
    fn decode(&self, memory: &Tensor, memory_bias: &Tensor, inputs: &[Vec<TokenId>]) -> Result<Tensor> {
        let pad = self.tokenizer.special().pad;
        let rows: Vec<&[TokenId]> = inputs.iter().map(Vec::as_slice).collect();
        let (ids, _, len) = pad_batch(&rows, pad, self.device())?;
        let causal = causal_bias(len, self.device())?;
        let h = self.decoder.forward(self.embedder.forward(&ids)?, memory, &causal, memory_bias)?;
        self.head.forward(&h)
    }

    fn decoder_inputs(&self, targets: &[&[TokenId]]) -> Vec<Vec<TokenId>> {
        let start = self.tokenizer.special().pad;
        targets
            .iter()
            .map(|t| std::iter::once(start).chain(t[..t.len() - 1].iter().copied()).collect())
            .collect()
    }

    /// Per-position losses `[batch * len]` plus the padding mask.
    fn losses(&self, batch: &[SeqPair]) -> Result<(Tensor, Vec<f32>)> {
        let sources: Vec<&[TokenId]> = batch
            .iter()
            .map(|p| &p.source[..p.source.len().min(self.config.max_source_len)])
            .collect();
        let targets: Vec<&[TokenId]> = batch
            .iter()
            .map(|p| &p.target[..p.target.len().min(self.config.max_target_len)])
            .collect();
        if targets.iter().any(|t| t.is_empty()) || sources.iter().any(|s| s.is_empty()) {
            return Err(QuistError::Argument("empty source or target sequence".into()));
        }
        let (memory, bias) = self.encode(&sources)?;
        let logits = self.decode(&memory, &bias, &self.decoder_inputs(&targets))?;
        let (b, len, vocab) = logits.dims3()?;
        let pad = self.tokenizer.special().pad;
        let mut gold = Vec::with_capacity(b * len);
        let mut mask = Vec::with_capacity(b * len);
        for t in &targets {
            for i in 0..len {
                gold.push(t.get(i).copied().unwrap_or(pad));
                mask.push(if i < t.len() { 1.0 } else { 0.0 });
            }
        }
        let nll = token_nll(&logits.reshape((b * len, vocab))?, &gold, self.device())?;
        Ok((nll, mask))
    }
}

impl Trainable for TransformerSeq2Seq {
    type Snapshot = Snapshot;

    fn groups(&self) -> &[ParameterGroup] {
        &self.state.owned
    }

    fn group_states(&self) -> Vec<GroupState> {
        self.state.group_states()
    }

    fn set_trainable(&mut self, groups: &BTreeSet<ParameterGroup>) -> Result<()> {
        self.state.set_trainable(groups)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        self.state.store.snapshot()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.state.store.restore(snapshot)
    }

    fn group_values(&self, group: ParameterGroup) -> Result<Vec<f32>> {
        self.state.store.group_values(group)
    }

    fn steps_taken(&self) -> u64 {
        self.state.steps
    }
}

impl Seq2SeqModel for TransformerSeq2Seq {
    type Encoded = EncodedSource;

    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn max_source_len(&self) -> usize {
        self.config.max_source_len
    }

    fn max_target_len(&self) -> usize {
        self.config.max_target_len
    }

    fn token_losses(&self, source: &[TokenId], target: &[TokenId]) -> Result<Vec<f32>> {
        let pair = SeqPair {
            source: source.to_vec(),
            target: target.to_vec(),
        };
        let (nll, _) = self.losses(std::slice::from_ref(&pair))?;
        Ok(nll.to_vec1::<f32>()?)
    }

    fn batch_loss(&self, batch: &[SeqPair]) -> Result<f32> {
        let (nll, mask) = self.losses(batch)?;
        Ok(masked_mean(&nll.detach(), &mask, self.device())?.to_scalar::<f32>()?)
    }

    fn train_step(&mut self, batch: &[SeqPair], learning_rate: f64) -> Result<f32> {
        let (nll, mask) = self.losses(batch)?;
        let loss = masked_mean(&nll, &mask, self.device())?;
        let value = loss.to_scalar::<f32>()?;
        self.state.step(&loss, learning_rate)?;
        Ok(value)
    }

    fn encode_source(&self, source: &[TokenId]) -> Result<EncodedSource> {
        if source.is_empty() {
            return Err(QuistError::Argument("empty source sequence".into()));
        }
        let (memory, _) = self.encode(&[source])?;
        Ok(EncodedSource {
            memory: memory.detach(),
        })
    }

    fn next_log_probs(&self, encoded: &EncodedSource, prefixes: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>> {
        let n = prefixes.len();
        let (_, s, d) = encoded.memory.dims3()?;
        let memory = encoded.memory.broadcast_as((n, s, d))?.contiguous()?;
        let bias = Tensor::zeros((n, 1, 1, s), DType::F32, self.device())?;
        let start = self.tokenizer.special().pad;
        let inputs: Vec<Vec<TokenId>> = prefixes
            .iter()
            .map(|p| std::iter::once(start).chain(p.iter().copied()).collect())
            .collect();
        let logits = self.decode(&memory, &bias, &inputs)?;
        let mut out = Vec::with_capacity(n);
        for (i, p) in prefixes.iter().enumerate() {
            let row = logits.get(i)?.get(p.len())?;
            out.push(log_softmax_last(&row)?.to_vec1::<f32>()?);
        }
        Ok(out)
    }
}

/// Encoder with a linear head over the classifier-start position.
pub struct TransformerClassifier {
    config: TransformerConfig,
    tokenizer: Tokenizer,
    embedder: Embedder,
    encoder: Encoder,
    head: Linear,
    state: TrainState,
}

impl TransformerClassifier {
    pub fn new(config: TransformerConfig, tokenizer: Tokenizer) -> Result<Self> {
        let mut store = ParamStore::new(config.seed);
        let embedder = Embedder::new(&mut store, tokenizer.vocab_size(), &config)?;
        let encoder = Encoder::new(&mut store, &config)?;
        let head = Linear::new(&mut store, "head.classes", ParameterGroup::Head, config.d_model, QuestionType::COUNT)?;
        let owned = vec![ParameterGroup::Embeddings, ParameterGroup::Encoder, ParameterGroup::Head];
        let state = TrainState::new(store, owned, config.weight_decay);
        Ok(Self {
            config,
            tokenizer,
            embedder,
            encoder,
            head,
            state,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub(crate) fn store(&self) -> &ParamStore {
        &self.state.store
    }

    pub(crate) fn set_steps(&mut self, steps: u64) {
        self.state.steps = steps;
    }

    fn forward(&self, batch: &[&[TokenId]]) -> Result<Tensor> {
        let device = self.state.store.device();
        let rows: Vec<&[TokenId]> = batch
            .iter()
            .map(|r| &r[..r.len().min(self.config.max_source_len)])
            .collect();
        let (ids, mask, len) = pad_batch(&rows, self.tokenizer.special().pad, device)?;
        let bias = key_bias(&mask, rows.len(), len, device)?;
        let h = self.encoder.forward(self.embedder.forward(&ids)?, &bias)?;
        let first = h.narrow(1, 0, 1)?.squeeze(1)?;
        self.head.forward(&first)
    }

    fn loss(&self, batch: &[(Vec<TokenId>, usize)]) -> Result<Tensor> {
        let rows: Vec<&[TokenId]> = batch.iter().map(|(ids, _)| ids.as_slice()).collect();
        let labels: Vec<TokenId> = batch.iter().map(|(_, l)| *l as TokenId).collect();
        let logits = self.forward(&rows)?;
        Ok(token_nll(&logits, &labels, self.state.store.device())?.mean(D::Minus1)?)
    }
}

impl Trainable for TransformerClassifier {
    type Snapshot = Snapshot;

    fn groups(&self) -> &[ParameterGroup] {
        &self.state.owned
    }

    fn group_states(&self) -> Vec<GroupState> {
        self.state.group_states()
    }

    fn set_trainable(&mut self, groups: &BTreeSet<ParameterGroup>) -> Result<()> {
        self.state.set_trainable(groups)
    }

    fn snapshot(&self) -> Result<Snapshot> {
        self.state.store.snapshot()
    }

    fn restore(&mut self, snapshot: &Snapshot) -> Result<()> {
        self.state.store.restore(snapshot)
    }

    fn group_values(&self, group: ParameterGroup) -> Result<Vec<f32>> {
        self.state.store.group_values(group)
    }

    fn steps_taken(&self) -> u64 {
        self.state.steps
    }
}

impl ClassifierModel for TransformerClassifier {
    fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    fn max_len(&self) -> usize {
        self.config.max_source_len
    }

    fn logits(&self, batch: &[Vec<TokenId>]) -> Result<Vec<Vec<f32>>> {
        let rows: Vec<&[TokenId]> = batch.iter().map(Vec::as_slice).collect();
        Ok(self.forward(&rows)?.to_vec2::<f32>()?)
    }

    fn batch_loss(&self, batch: &[(Vec<TokenId>, usize)]) -> Result<f32> {
        Ok(self.loss(batch)?.to_scalar::<f32>()?)
    }

    fn train_step(&mut self, batch: &[(Vec<TokenId>, usize)], learning_rate: f64) -> Result<f32> {
        let loss = self.loss(batch)?;
        let value = loss.to_scalar::<f32>()?;
        self.state.step(&loss, learning_rate)?;
        Ok(value)
    }
}
