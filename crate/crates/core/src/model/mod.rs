//! The unified masked language model over prompted inputs.

pub mod mlm;
pub mod nn;
pub mod objective;
pub mod params;
pub mod train;
pub mod verbalizer;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use self::mlm::{MaskedLm, MlmDims};
use self::nn::{log_softmax, softmax, Linear};
use self::objective::{fine_tune_loss, unified_loss, MaskTargets};
use self::params::ParamStore;
use self::verbalizer::{Verbalizer, NECESSARY_WORD, UNNECESSARY_WORD};
use crate::answering::{generative_tags, predict_necessity, score_tags, LabelSpace, RankedPrediction};
use crate::config::{AnswerConfig, AnswerMode, NecessityTie, PrefixInitMode, RunConfig, DEFAULT_TEMPLATE};
use crate::corpus::{tag_words, Necessity, Request};
use crate::dfg::{build_request_dfg, code_tokens, detect_language, guess_language, DataFlowGraph, RequestGraph};
use crate::error::{Error, Result};
use crate::prefix::{embed_graph, init_prefix, shared_average, trainable_partition, CodeEncoder, EncodedCode, GraphCache, Partition, PrefixMatrix, PREFIX_PARAM};
use crate::prompting::{assemble_input, render_template, ModelInput, PromptTemplate, Slot, Span, Spans};
use crate::tokenizer::{Tokenizer, TokenizerBuilder, MASK};

/// Which parts of the prompt a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSpec {
    /// Text prompt plus code prefix and graph slots.
    #[default]
    Full,
    /// Text prompt with graph slots spliced after the text, no prefix slots.
    NoCodePrefix,
    /// No prompt: plain encoding with classification heads.
    FineTune,
}

impl AblationSpec {
    pub const ALL: [AblationSpec; 3] = [AblationSpec::Full, AblationSpec::NoCodePrefix, AblationSpec::FineTune];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationSpec::Full => "full",
            AblationSpec::NoCodePrefix => "no_code_prefix",
            AblationSpec::FineTune => "fine_tune",
        }
    }
}

impl fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationSpec::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}` (full, no_code_prefix, fine_tune)")))
    }
}

/// Vocabulary from the training split. Label words, the necessity words
/// and the template words are always whole entries.
pub fn build_tokenizer(train: &[Request], labels: &LabelSpace, config: &RunConfig) -> Tokenizer {
    let m = &config.model;
    let mut b = TokenizerBuilder::new(m.max_vocab, m.vocab_min_count, &[m.pad_word.as_str()]);
    let template = config.prompting.template.replace(MASK, " ");
    let mut words: Vec<String> = labels.tags().iter().flat_map(|t| tag_words(t)).map(str::to_string).collect();
    words.extend([NECESSARY_WORD.to_string(), UNNECESSARY_WORD.to_string()]);
    words.extend(template.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_string));
    b.require_words(words.iter().map(String::as_str));
    for r in train {
        b.feed(&r.title);
        b.feed(&r.description);
        for seg in &r.code {
            b.feed(seg);
        }
    }
    b.feed(&config.prefix.generic_snippet);
    b.build()
}

/// One request ready for the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub input: ModelInput,
    /// Frozen graph vectors, one per graph slot in slot order.
    pub graph_rows: Vec<Vec<f32>>,
    /// The request's own prefix initialization, in per-request mode.
    pub prefix_base: Option<Vec<Vec<f32>>>,
}

/// Looked-up input rows of a batch, before position and type embeddings.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    /// `[B, L, H]`
    pub rows: Tensor,
    /// `[B, L]` region types.
    pub types: Tensor,
    /// `[B, L]`, 1 for real positions.
    pub valid: Tensor,
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[B, M, V]` log-probabilities at the mask positions.
    pub mask_log_probs: Option<Tensor>,
    /// `[B, 2]`, necessary first.
    pub necessity_logits: Option<Tensor>,
    /// `[B, |L|]`
    pub tag_logits: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: u64,
    pub tags: Vec<String>,
    pub tag_scores: Vec<f64>,
    pub necessity: Necessity,
    pub necessity_score: f64,
}

#[derive(Debug, Clone)]
struct Heads {
    pool: Linear,
    necessity: Linear,
    tags: Linear,
}

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const PREFIX_FILE: &str = "prefix.safetensors";
pub const ENCODER_FILE: &str = "code_encoder.safetensors";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const LABELS_FILE: &str = "labels.json";
pub const VERBALIZER_FILE: &str = "verbalizer.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const META_FILE: &str = "meta.json";

/// Everything needed to re-run or audit a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub necessity_rule: String,
    pub manifest_hash: String,
    pub config_hash: String,
    pub ablation: AblationSpec,
    pub backbone: String,
    pub code_encoder: String,
    /// Set when the code and text hidden sizes differ and a trained linear map joins them.
    pub adapter: bool,
    pub step: usize,
    pub val_loss: Option<f64>,
    pub code_version: String,
}

pub struct UnifiedModel {
    pub spec: AblationSpec,
    pub config: RunConfig,
    pub tokenizer: Tokenizer,
    pub labels: LabelSpace,
    pub verbalizer: Verbalizer,
    pub template: PromptTemplate,
    pub store: ParamStore,
    pub mlm: MaskedLm,
    pub prefix: Option<PrefixMatrix>,
    adapter: Option<Linear>,
    heads: Option<Heads>,
    pub encoder: CodeEncoder,
    pub cache: GraphCache,
    generic: EncodedCode,
}

impl UnifiedModel {
    pub fn new(config: &RunConfig, spec: AblationSpec, tokenizer: Tokenizer, labels: LabelSpace, device: &Device) -> Result<Self> {
        let m = &config.model;
        if spec == AblationSpec::FineTune && config.prompting.template != DEFAULT_TEMPLATE {
            return Err(Error::Config("fine_tune uses no template; drop the prompting.template override".into()));
        }
        if labels.is_empty() {
            return Err(Error::Data("label space is empty".into()));
        }
        let template = PromptTemplate::from_config(&config.prompting)?;
        let verbalizer = Verbalizer::new(&labels, &tokenizer, template.n_topic_masks(), &m.pad_word)?;
        let mut store = ParamStore::new(m.seed, m.dtype.to_dtype(), device);
        let dims = MlmDims {
            vocab: tokenizer.vocab_size(),
            hidden: m.hidden,
            layers: m.layers,
            heads: m.heads,
            ffn: m.ffn,
            max_len: config.prompting.budget,
        };
        let mlm = MaskedLm::new(&mut store, dims)?;
        if m.backbone != "micro" {
            let path = Path::new(&m.backbone);
            if !path.is_file() {
                return Err(Error::Asset(format!("backbone weights `{}` not found", m.backbone)));
            }
            store.load_prefixed(path, "mlm.")?;
        }
        let encoder = CodeEncoder::new(m, tokenizer.vocab_size(), m.seed.wrapping_add(0x9e37_79b9), device)?;
        let snippet = &config.prefix.generic_snippet;
        let lang = guess_language(snippet);
        let generic = encoder.encode(&code_tokens(snippet, lang), &DataFlowGraph::empty(lang), &tokenizer)?;
        let len = config.prefix.length;
        let prefix = match spec {
            AblationSpec::Full => {
                let init = init_prefix(&generic, &generic, len)?;
                Some(PrefixMatrix::new(&mut store, config.prefix.init_mode, &init, len, m.code_hidden)?)
            }
            _ => None,
        };
        let adapter = if spec != AblationSpec::FineTune && m.code_hidden != m.hidden {
            Some(Linear::new(&mut store, "adapter", m.code_hidden, m.hidden, true)?)
        } else {
            None
        };
        let heads = if spec == AblationSpec::FineTune {
            Some(Heads {
                pool: Linear::new(&mut store, "head.pool", m.hidden, m.hidden, true)?,
                necessity: Linear::new(&mut store, "head.necessity", m.hidden, 2, true)?,
                tags: Linear::new(&mut store, "head.tags", m.hidden, labels.len(), true)?,
            })
        } else {
            None
        };
        if m.freeze_backbone {
            store.set_trainable("mlm.", false);
        }
        Ok(Self {
            spec,
            config: config.clone(),
            tokenizer,
            labels,
            verbalizer,
            template,
            store,
            mlm,
            prefix,
            adapter,
            heads,
            encoder,
            cache: GraphCache::new(),
            generic,
        })
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn has_adapter(&self) -> bool {
        self.adapter.is_some()
    }

    pub fn partition(&self) -> Partition {
        trainable_partition(&self.store, self.encoder.params())
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix.as_ref().map_or(0, |p| p.len())
    }

    /// Encoded code of a request, computed once per request id.
    pub fn encode_code(&self, request: &Request, graph: Option<&RequestGraph>) -> Result<Arc<EncodedCode>> {
        self.cache.get_or_encode(request.id, || match graph {
            Some(g) => self.encoder.encode(&g.tokens, &g.graph, &self.tokenizer),
            None => {
                let lang = detect_language(&request.code.join("\n"), &request.tags);
                let g = build_request_dfg(request.id, &request.code, lang);
                self.encoder.encode(&g.tokens, &g.graph, &self.tokenizer)
            }
        })
    }

    /// Replace the shared prefix with the row-wise mean over a seeded sample
    /// of code-bearing training requests. Other modes are left as built.
    pub fn init_shared_prefix(&mut self, train: &[Request], graphs: &HashMap<u64, RequestGraph>) -> Result<()> {
        if self.config.prefix.init_mode != PrefixInitMode::SharedAvg || self.prefix.is_none() {
            return Ok(());
        }
        let mut pool: Vec<&Request> = train.iter().filter(|r| !r.code.is_empty()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.model.seed);
        pool.shuffle(&mut rng);
        pool.truncate(self.config.prefix.init_sample);
        let encoded = pool
            .iter()
            .map(|r| self.encode_code(r, graphs.get(&r.id)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&EncodedCode> = encoded.iter().map(|e| e.as_ref()).collect();
        let rows = shared_average(&refs, &self.generic, self.prefix_len())?;
        let t = rows_tensor(&rows, self.config.model.code_hidden, self.dtype(), self.device())?;
        let var = &self.store.get(PREFIX_PARAM).expect("prefix registered").var;
        var.set(&t)?;
        Ok(())
    }

    pub fn prepare(&self, request: &Request, graph: Option<&RequestGraph>) -> Result<Prepared> {
        if self.spec == AblationSpec::FineTune {
            return Ok(self.prepare_plain(request, graph));
        }
        let encoded = self.encode_code(request, graph)?;
        let prompted = render_template(request, &self.template, &self.tokenizer);
        let p = self.prefix_len();
        let input = assemble_input(&prompted, p, &encoded.aligned_nodes(), &self.config.prompting)?;
        let graph_rows = embed_graph(&encoded, &input.graph_nodes());
        let prefix_base = match self.config.prefix.init_mode {
            PrefixInitMode::PerRequest if p > 0 => Some(init_prefix(&encoded, &self.generic, p)?),
            _ => None,
        };
        Ok(Prepared { input, graph_rows, prefix_base })
    }

    /// `[CLS] title description [SEP] code`, with code as ordinary tokens.
    fn prepare_plain(&self, request: &Request, graph: Option<&RequestGraph>) -> Prepared {
        let tok = &self.tokenizer;
        let cfg = &self.config.prompting;
        let scrub = |ids: Vec<u32>| -> Vec<u32> {
            ids.into_iter().map(|id| if tok.is_special(id) { tok.unk_id() } else { id }).collect()
        };
        let title = scrub(tok.encode(&request.title));
        let desc = scrub(tok.encode(&request.description));
        let tokens = match graph {
            Some(g) => g.tokens.clone(),
            None => code_tokens(&request.code.join("\n"), detect_language(&request.code.join("\n"), &request.tags)),
        };
        let (code, _) = self.encoder.subtokens(&tokens, tok);
        let n_title = title.len().min(cfg.title_budget).min(cfg.budget.saturating_sub(2));
        let room = cfg.budget - 2 - n_title;
        let n_code = code.len().min(cfg.code_budget).min(room);
        let n_desc = desc.len().min(room - n_code);
        let mut slots = vec![Slot::Token(tok.cls_id())];
        slots.extend(title[..n_title].iter().map(|&i| Slot::Token(i)));
        let d0 = slots.len();
        slots.extend(desc[..n_desc].iter().map(|&i| Slot::Token(i)));
        slots.push(Slot::Token(tok.sep_id()));
        let c0 = slots.len();
        slots.extend(code[..n_code].iter().map(|&i| Slot::Token(i)));
        let input = ModelInput {
            request_id: request.id,
            mask_positions: Vec::new(),
            n_topic_masks: 0,
            spans: Spans {
                template: Span { start: 1, end: 1 },
                title: Span { start: 1, end: d0 },
                description: Span { start: d0, end: d0 + n_desc },
                code: Span { start: c0, end: slots.len() },
            },
            slots,
        };
        Prepared { input, graph_rows: Vec::new(), prefix_base: None }
    }

    fn adapt(&self, t: Tensor) -> Result<Tensor> {
        match &self.adapter {
            Some(a) => a.forward(&t),
            None => Ok(t),
        }
    }

    /// Look up every slot of a batch in one table: token embeddings, then
    /// prefix rows, then the frozen graph vectors.
    pub fn embed_inputs(&self, batch: &[&Prepared]) -> Result<BatchInputs> {
        let dev = self.device().clone();
        let dtype = self.dtype();
        let b = batch.len();
        let l = batch.iter().map(|p| p.input.len()).max().unwrap_or(0).max(1);
        if l > self.config.prompting.budget {
            return Err(Error::Data(format!("input of length {l} exceeds the budget {}", self.config.prompting.budget)));
        }
        let hc = self.config.model.code_hidden;
        let mut tables = vec![self.mlm.tok_emb.clone()];
        let mut offset = self.tokenizer.vocab_size();
        let mut prefix_off = vec![offset; b];
        if let Some(p) = &self.prefix {
            if p.mode == PrefixInitMode::PerRequest {
                for (i, ex) in batch.iter().enumerate() {
                    let base = match &ex.prefix_base {
                        Some(rows) => Some(rows_tensor(rows, hc, dtype, &dev)?),
                        None => None,
                    };
                    tables.push(self.adapt(p.rows(base.as_ref())?)?);
                    prefix_off[i] = offset;
                    offset += p.len();
                }
            } else {
                tables.push(self.adapt(p.rows(None)?)?);
                offset += p.len();
            }
        }
        let mut graph_off = vec![offset; b];
        let mut flat: Vec<Vec<f32>> = Vec::new();
        for (i, ex) in batch.iter().enumerate() {
            graph_off[i] = offset + flat.len();
            flat.extend(ex.graph_rows.iter().cloned());
        }
        if !flat.is_empty() {
            tables.push(self.adapt(rows_tensor(&flat, hc, dtype, &dev)?)?);
        }
        let table = Tensor::cat(&tables, 0)?;

        let pad = self.tokenizer.pad_id();
        let mut idx = vec![pad; b * l];
        let mut types = vec![0u32; b * l];
        let mut valid = vec![0f64; b * l];
        for (i, ex) in batch.iter().enumerate() {
            let mut g = 0;
            for (pos, slot) in ex.input.slots.iter().enumerate() {
                let at = i * l + pos;
                valid[at] = 1.0;
                match *slot {
                    Slot::Token(id) => idx[at] = id,
                    Slot::Prefix(j) => {
                        idx[at] = (prefix_off[i] + j) as u32;
                        types[at] = 1;
                    }
                    Slot::Graph(_) => {
                        idx[at] = (graph_off[i] + g) as u32;
                        types[at] = 2;
                        g += 1;
                    }
                }
            }
            if g != ex.graph_rows.len() {
                return Err(Error::Data(format!("request {}: graph slots and vectors disagree", ex.input.request_id)));
            }
        }
        let h = self.config.model.hidden;
        let rows = table
            .index_select(&Tensor::from_vec(idx, b * l, &dev)?, 0)?
            .reshape((b, l, h))?;
        Ok(BatchInputs {
            rows,
            types: Tensor::from_vec(types, (b, l), &dev)?,
            valid: Tensor::from_vec(valid, (b, l), &dev)?.to_dtype(dtype)?,
        })
    }

    /// Forward pass from already looked-up input rows.
    pub fn forward_rows(&self, inputs: &BatchInputs, batch: &[&Prepared]) -> Result<ModelOutput> {
        let x = self.mlm.embed(&inputs.rows, &inputs.types)?;
        let hidden = self.mlm.encode(&x, &inputs.valid)?;
        let (b, l, h) = hidden.dims3()?;
        if let Some(heads) = &self.heads {
            let cls = hidden.narrow(1, 0, 1)?.squeeze(1)?;
            let pooled = heads.pool.forward(&cls)?.tanh()?;
            return Ok(ModelOutput {
                mask_log_probs: None,
                necessity_logits: Some(heads.necessity.forward(&pooled)?),
                tag_logits: Some(heads.tags.forward(&pooled)?),
            });
        }
        let m = batch.first().map_or(0, |p| p.input.mask_positions.len());
        let mut at = Vec::with_capacity(b * m);
        for (i, ex) in batch.iter().enumerate() {
            if ex.input.mask_positions.len() != m {
                return Err(Error::Data("examples in a batch disagree on the mask count".into()));
            }
            at.extend(ex.input.mask_positions.iter().map(|&p| (i * l + p) as u32));
        }
        let picked = hidden
            .reshape((b * l, h))?
            .index_select(&Tensor::from_vec(at, b * m, self.device())?, 0)?;
        let lp = log_softmax(&self.mlm.logits(&picked)?)?;
        Ok(ModelOutput {
            mask_log_probs: Some(lp.reshape((b, m, self.tokenizer.vocab_size()))?),
            necessity_logits: None,
            tag_logits: None,
        })
    }

    pub fn forward(&self, batch: &[&Prepared]) -> Result<ModelOutput> {
        let inputs = self.embed_inputs(batch)?;
        self.forward_rows(&inputs, batch)
    }

    /// Training objective of the model's variant. `targets` are the mask
    /// targets (prompt variants); the fine-tune heads read `necessity` and `tags`.
    pub fn loss(&self, out: &ModelOutput, targets: &[MaskTargets], necessity: &[Necessity], tags: &[Vec<usize>]) -> Result<Tensor> {
        match (&out.mask_log_probs, &out.necessity_logits, &out.tag_logits) {
            (Some(lp), _, _) => unified_loss(lp, targets),
            (None, Some(n), Some(t)) => fine_tune_loss(n, t, necessity, tags),
            _ => Err(Error::Data("model output carries no predictions".into())),
        }
    }

    pub fn predict(&self, prepared: &[Prepared], answer: &AnswerConfig) -> Result<Vec<PredictionRecord>> {
        let mut out = Vec::with_capacity(prepared.len());
        for chunk in prepared.chunks(self.config.model.batch_size.max(1)) {
            let refs: Vec<&Prepared> = chunk.iter().collect();
            let o = self.forward(&refs)?;
            if let Some(lp) = &o.mask_log_probs {
                let probs = lp.exp()?.to_dtype(DType::F64)?.to_vec3::<f64>()?;
                for (ex, masks) in chunk.iter().zip(&probs) {
                    out.push(self.answer_masks(ex.input.request_id, masks, ex.input.n_topic_masks, answer));
                }
            } else {
                let nec = softmax(o.necessity_logits.as_ref().expect("heads"))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
                let tags = o.tag_logits.as_ref().expect("heads").to_dtype(DType::F64)?.to_vec2::<f64>()?;
                for ((ex, n), t) in chunk.iter().zip(&nec).zip(&tags) {
                    out.push(self.answer_heads(ex.input.request_id, n, t, answer));
                }
            }
        }
        Ok(out)
    }

    fn answer_masks(&self, id: u64, masks: &[Vec<f64>], n_topic: usize, answer: &AnswerConfig) -> PredictionRecord {
        let dists: Vec<&[f64]> = masks[..n_topic].iter().map(|d| d.as_slice()).collect();
        let k = answer.top_k.min(self.labels.len());
        let ranked = match answer.mode {
            AnswerMode::Scored => score_tags(&dists, &self.labels, &self.verbalizer.tags, k),
            AnswerMode::Generative => {
                let pad = self.tokenizer.token_to_id(&self.verbalizer.pad_word).unwrap_or(self.tokenizer.pad_id());
                generative_tags(&dists, self.tokenizer.vocab(), pad, &self.labels, k)
            }
        };
        let (necessity, score) = predict_necessity(
            &masks[n_topic],
            self.verbalizer.necessary,
            self.verbalizer.unnecessary,
            answer.necessity_tie,
        );
        record(id, ranked, necessity, score)
    }

    fn answer_heads(&self, id: u64, nec: &[f64], tag_logits: &[f64], answer: &AnswerConfig) -> PredictionRecord {
        let mut order: Vec<usize> = (0..tag_logits.len()).collect();
        order.sort_by(|&a, &b| tag_logits[b].partial_cmp(&tag_logits[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        let k = answer.top_k.min(self.labels.len());
        let items = order[..k].iter().map(|&i| (self.labels.tags()[i].clone(), tag_logits[i])).collect();
        let necessity = if nec[0] > nec[1] {
            Necessity::Necessary
        } else if nec[1] > nec[0] {
            Necessity::Unnecessary
        } else {
            match answer.necessity_tie {
                NecessityTie::Necessary => Necessity::Necessary,
                NecessityTie::Unnecessary => Necessity::Unnecessary,
            }
        };
        let score = if necessity == Necessity::Necessary { nec[0] } else { nec[1] };
        record(id, RankedPrediction { k, items }, necessity, score)
    }

    pub fn save_checkpoint(&self, dir: &Path, meta: &RunMetadata) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.save(&dir.join(WEIGHTS_FILE))?;
        self.encoder.params().save(&dir.join(ENCODER_FILE))?;
        let mut prefix = HashMap::new();
        for (name, p) in self.store.iter().filter(|(n, _)| n.starts_with("prefix.") || n.starts_with("adapter.")) {
            prefix.insert(name.to_string(), p.var.as_tensor().clone());
        }
        if !prefix.is_empty() {
            candle_core::safetensors::save(&prefix, dir.join(PREFIX_FILE))?;
        }
        self.tokenizer.save(&dir.join(TOKENIZER_FILE))?;
        write_json(&dir.join(LABELS_FILE), &self.labels)?;
        write_json(&dir.join(VERBALIZER_FILE), &self.verbalizer)?;
        let cfg = dir.join(CONFIG_FILE);
        std::fs::write(&cfg, self.config.to_toml()).map_err(|e| Error::io(&cfg, e))?;
        write_json(&dir.join(META_FILE), meta)
    }

    pub fn load_checkpoint(dir: &Path, device: &Device) -> Result<(Self, RunMetadata)> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&cfg_path)
            .map_err(|e| Error::Asset(format!("checkpoint {}: {e}", cfg_path.display())))?;
        let mut config = RunConfig::from_toml_str(&text)?;
        config.model.backbone = "micro".into();
        config.model.code_encoder = "micro".into();
        let meta: RunMetadata = read_json(&dir.join(META_FILE))?;
        let tokenizer = Tokenizer::load(&dir.join(TOKENIZER_FILE))?;
        let labels: LabelSpace = read_json(&dir.join(LABELS_FILE))?;
        let saved: Verbalizer = read_json(&dir.join(VERBALIZER_FILE))?;
        let mut model = Self::new(&config, meta.ablation, tokenizer, labels, device)?;
        if model.verbalizer != saved {
            return Err(Error::Asset(format!("{}: verbalization table does not match the tokenizer", dir.display())));
        }
        model.store.load(&dir.join(WEIGHTS_FILE))?;
        model.encoder.load(&dir.join(ENCODER_FILE))?;
        let lang = guess_language(&config.prefix.generic_snippet);
        model.generic = model.encoder.encode(
            &code_tokens(&config.prefix.generic_snippet, lang),
            &DataFlowGraph::empty(lang),
            &model.tokenizer,
        )?;
        model.config.model.backbone = meta.backbone.clone();
        model.config.model.code_encoder = meta.code_encoder.clone();
        Ok((model, meta))
    }
}

fn record(id: u64, ranked: RankedPrediction, necessity: Necessity, necessity_score: f64) -> PredictionRecord {
    PredictionRecord {
        id,
        tags: ranked.items.iter().map(|(t, _)| t.clone()).collect(),
        tag_scores: ranked.items.iter().map(|(_, s)| *s).collect(),
        necessity,
        necessity_score,
    }
}

fn rows_tensor(rows: &[Vec<f32>], width: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    Ok(Tensor::from_vec(flat, (rows.len(), width), device)?.to_dtype(dtype)?)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Asset(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Asset(format!("{}: {e}", path.display())))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{Precision, TagTargetMode};

    fn req(id: u64, title: &str, code: &str, tags: &[&str], necessity: Necessity) -> Request {
        Request {
            id,
            title: title.into(),
            description: "please review this code and suggest improvements".into(),
            code: if code.is_empty() { vec![] } else { vec![code.into()] },
            tags: tags.iter().map(|t| t.to_string()).collect(),
            necessity,
        }
    }

    pub(crate) fn tiny_config() -> RunConfig {
        let mut c = RunConfig::default();
        c.model.hidden = 32;
        c.model.heads = 2;
        c.model.ffn = 64;
        c.model.layers = 1;
        c.model.code_hidden = 32;
        c.model.code_heads = 2;
        c.model.code_max_tokens = 64;
        c.model.vocab_min_count = 1;
        c.model.batch_size = 4;
        c.model.lr = 1e-3;
        c.model.dtype = Precision::F32;
        c.prompting.budget = 96;
        c.prompting.code_budget = 32;
        c.prefix.length = 4;
        c
    }

    fn corpus() -> Vec<Request> {
        vec![
            req(1, "sum a list in python", "total = 0\nfor x in items:\n    total = total + x", &["python"], Necessity::Necessary),
            req(2, "linked list in c", "int *p = malloc(4);\n*p = 5;", &["c", "linked-list"], Necessity::Unnecessary),
            req(3, "object oriented shapes", "class Shape:\n    def area(self):\n        return 0", &["python", "object-oriented design"], Necessity::Necessary),
            req(4, "no code here", "", &["c"], Necessity::Unnecessary),
        ]
    }

    pub(crate) fn tiny_model(spec: AblationSpec, config: &RunConfig) -> (UnifiedModel, Vec<Request>) {
        let reqs = corpus();
        let labels = LabelSpace::new(reqs.iter().flat_map(|r| r.tags.clone()).collect());
        let tok = build_tokenizer(&reqs, &labels, config);
        let mut m = UnifiedModel::new(config, spec, tok, labels, &Device::Cpu).unwrap();
        m.init_shared_prefix(&reqs, &HashMap::new()).unwrap();
        (m, reqs)
    }

    fn prepared(m: &UnifiedModel, reqs: &[Request]) -> Vec<Prepared> {
        reqs.iter().map(|r| m.prepare(r, None).unwrap()).collect()
    }

    #[test]
    fn mask_distributions_are_normalized() {
        let (m, reqs) = tiny_model(AblationSpec::Full, &tiny_config());
        let p = prepared(&m, &reqs);
        let refs: Vec<&Prepared> = p.iter().collect();
        let lp = m.forward(&refs).unwrap().mask_log_probs.unwrap();
        assert_eq!(lp.dims(), &[4, 4, m.tokenizer.vocab_size()]);
        for ex in lp.exp().unwrap().to_vec3::<f32>().unwrap() {
            for dist in ex {
                assert!(dist.iter().all(|&p| p >= 0.0));
                assert!((dist.iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn identical_inputs_identical_outputs_and_position_sensitivity() {
        let (m, reqs) = tiny_model(AblationSpec::Full, &tiny_config());
        let a = m.prepare(&reqs[0], None).unwrap();
        let out = |p: &Prepared| m.forward(&[p]).unwrap().mask_log_probs.unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(out(&a), out(&a));
        let mut b = a.clone();
        let d = b.input.spans.description;
        b.input.slots.swap(d.start, d.start + 1);
        assert_ne!(b.input.slots, a.input.slots);
        assert_ne!(out(&a), out(&b));
    }

    #[test]
    fn padding_does_not_change_predictions() {
        let (m, reqs) = tiny_model(AblationSpec::Full, &tiny_config());
        let p = prepared(&m, &reqs);
        let alone = m.forward(&[&p[3]]).unwrap().mask_log_probs.unwrap().to_vec3::<f32>().unwrap();
        let batched = m.forward(&[&p[0], &p[3]]).unwrap().mask_log_probs.unwrap().to_vec3::<f32>().unwrap();
        for (x, y) in alone[0].iter().flatten().zip(batched[1].iter().flatten()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn code_region_layout_per_variant() {
        let cfg = tiny_config();
        let (full, reqs) = tiny_model(AblationSpec::Full, &cfg);
        let p = full.prepare(&reqs[0], None).unwrap();
        let code = &p.input.slots[p.input.spans.code.start..p.input.spans.code.end];
        assert!(code[..4].iter().enumerate().all(|(j, s)| *s == Slot::Prefix(j)));
        assert_eq!(p.graph_rows.len(), p.input.graph_nodes().len());
        assert!(!p.graph_rows.is_empty());
        let (ncp, _) = tiny_model(AblationSpec::NoCodePrefix, &cfg);
        let q = ncp.prepare(&reqs[0], None).unwrap();
        assert!(q.input.slots.iter().all(|s| !matches!(s, Slot::Prefix(_))));
        assert_eq!(q.graph_rows, p.graph_rows);
        let (ft, _) = tiny_model(AblationSpec::FineTune, &cfg);
        let f = ft.prepare(&reqs[0], None).unwrap();
        assert!(f.input.mask_positions.is_empty());
        let out = ft.forward(&[&f]).unwrap();
        assert_eq!(out.tag_logits.unwrap().dims(), &[1, ft.labels.len()]);
    }

    #[test]
    fn fine_tune_rejects_template_override() {
        let mut cfg = tiny_config();
        cfg.prompting.template = "Tags [MASK] [MASK] [MASK]; needed [MASK]".into();
        let reqs = corpus();
        let labels = LabelSpace::new(vec!["c".into()]);
        let tok = build_tokenizer(&reqs, &labels, &cfg);
        let err = UnifiedModel::new(&cfg, AblationSpec::FineTune, tok, labels, &Device::Cpu).err().unwrap();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn per_request_prefix_differs_by_request() {
        let mut cfg = tiny_config();
        cfg.prefix.init_mode = PrefixInitMode::PerRequest;
        let (m, reqs) = tiny_model(AblationSpec::Full, &cfg);
        let p = prepared(&m, &reqs);
        assert_ne!(p[0].prefix_base, p[1].prefix_base);
        let refs: Vec<&Prepared> = p.iter().collect();
        assert!(m.forward(&refs).is_ok());
    }

    #[test]
    fn adapter_joins_unequal_hidden_sizes() {
        let mut cfg = tiny_config();
        cfg.model.code_hidden = 16;
        let (m, reqs) = tiny_model(AblationSpec::Full, &cfg);
        assert!(m.has_adapter());
        assert!(m.partition().trainable.contains("adapter.weight"));
        let p = m.prepare(&reqs[0], None).unwrap();
        assert!(m.forward(&[&p]).is_ok());
    }

    #[test]
    fn partition_covers_every_parameter() {
        let (m, _) = tiny_model(AblationSpec::Full, &tiny_config());
        let part = m.partition();
        assert!(part.trainable.contains(PREFIX_PARAM));
        assert!(part.frozen.iter().any(|n| n.starts_with("code.")));
        let mut cfg = tiny_config();
        cfg.model.freeze_backbone = true;
        let (m, _) = tiny_model(AblationSpec::Full, &cfg);
        let part = m.partition();
        assert!(part.trainable.iter().all(|n| !n.starts_with("mlm.")));
        assert!(part.trainable.contains(PREFIX_PARAM));
    }

    #[test]
    fn checkpoint_roundtrip_gives_identical_predictions() {
        let mut cfg = tiny_config();
        cfg.model.tag_target = TagTargetMode::Soft;
        let (m, reqs) = tiny_model(AblationSpec::Full, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let meta = train::default_meta(&m);
        m.save_checkpoint(dir.path(), &meta).unwrap();
        let (back, meta_back) = UnifiedModel::load_checkpoint(dir.path(), &Device::Cpu).unwrap();
        assert_eq!(meta_back, meta);
        let answer = AnswerConfig::default();
        let a = m.predict(&prepared(&m, &reqs), &answer).unwrap();
        let b = back.predict(&prepared(&back, &reqs), &answer).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].tags.len(), m.labels.len().min(10));
    }

    #[test]
    fn missing_backbone_is_an_asset_error() {
        let mut cfg = tiny_config();
        cfg.model.backbone = "/nonexistent/bert.safetensors".into();
        let reqs = corpus();
        let labels = LabelSpace::new(vec!["c".into()]);
        let tok = build_tokenizer(&reqs, &labels, &cfg);
        let err = UnifiedModel::new(&cfg, AblationSpec::Full, tok, labels, &Device::Cpu).err().unwrap();
        assert_eq!(err.exit_code(), 4);
    }
}
