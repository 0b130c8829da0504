//! Model dimensions, the named parameter store and per-graph parameter binding.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::Rng;

use crate::corpus::{Case, QuestionType, TagSet, Vocabulary};
use crate::error::{Error, Result};
use crate::numgrad::{Graph, LstmWeights, Tensor, Var};

/// Architecture dimensions. Decoder and attention widths equal `hidden_dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub pos_size: usize,
    pub ner_size: usize,
    pub use_answer_hidden_states: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("feat_dim", self.feat_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("ff_dim", self.ff_dim),
            ("vocab_size", self.vocab_size),
            ("pos_size", self.pos_size),
            ("ner_size", self.ner_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.hidden_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden_dim must be even, got {}",
                self.hidden_dim
            )));
        }
        if self.vocab_size <= 4 {
            return Err(Error::Config(
                "vocab_size must exceed the 4 specials".into(),
            ));
        }
        Ok(())
    }

    /// Width of `x_t = [e_t; a_t; l_t]`.
    pub fn input_dim(&self) -> usize {
        self.word_dim + 4 * self.feat_dim
    }

    /// Width of the lexical feature embedding `l_t`.
    pub fn lexical_dim(&self) -> usize {
        3 * self.feat_dim
    }

    pub fn type_input_dim(&self) -> usize {
        let base = if self.use_answer_hidden_states {
            self.hidden_dim
        } else {
            self.input_dim()
        };
        base + self.lexical_dim()
    }

    /// Expected parameter names and shapes, in a fixed order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let h = self.hidden_dim;
        let hd = h / 2;
        let mut specs = vec![
            ParamSpec::embedding(names::WORD_EMB, self.vocab_size, self.word_dim),
            ParamSpec::embedding(names::ANSWER_EMB, 3, self.feat_dim),
            ParamSpec::embedding(names::POS_EMB, self.pos_size, self.feat_dim),
            ParamSpec::embedding(names::NER_EMB, self.ner_size, self.feat_dim),
            ParamSpec::embedding(names::CASE_EMB, Case::COUNT, self.feat_dim),
        ];
        for layer in 0..self.num_layers {
            let d_in = if layer == 0 { self.input_dim() } else { h };
            for dir in ["fwd", "bwd"] {
                let (w, b) = names::encoder(layer, dir);
                specs.push(ParamSpec::weight(w, vec![4 * hd, d_in + hd]));
                specs.push(ParamSpec::bias(b, 4 * hd));
            }
        }
        specs.extend([
            ParamSpec::weight(
                names::TYPE_LSTM_W.into(),
                vec![4 * h, self.type_input_dim() + h],
            ),
            ParamSpec::bias(names::TYPE_LSTM_B.into(), 4 * h),
            ParamSpec::weight(names::TYPE_OUT.into(), vec![QuestionType::COUNT, h]),
            ParamSpec::weight(names::DEC_INIT_W.into(), vec![h, h]),
            ParamSpec::bias(names::DEC_INIT_B.into(), h),
            ParamSpec::weight(names::DEC_LSTM_W.into(), vec![4 * h, self.word_dim + h + h]),
            ParamSpec::bias(names::DEC_LSTM_B.into(), 4 * h),
            ParamSpec::weight(names::ATTN_WS.into(), vec![h, h]),
            ParamSpec::weight(names::ATTN_WH.into(), vec![h, h]),
            ParamSpec::weight(names::ATTN_V.into(), vec![h]),
            ParamSpec::weight(names::OUT_V1.into(), vec![self.ff_dim, 2 * h]),
            ParamSpec::bias(names::OUT_B1.into(), self.ff_dim),
            ParamSpec::weight(names::OUT_V2.into(), vec![self.vocab_size, self.ff_dim]),
            ParamSpec::bias(names::OUT_B2.into(), self.vocab_size),
            ParamSpec::weight(names::GATE_W.into(), vec![2 * h + self.word_dim]),
            ParamSpec::bias(names::GATE_B.into(), 1),
        ]);
        specs
    }
}

/// Parameter names.
pub mod names {
    pub const WORD_EMB: &str = "emb.word";
    pub const ANSWER_EMB: &str = "emb.answer";
    pub const POS_EMB: &str = "emb.pos";
    pub const NER_EMB: &str = "emb.ner";
    pub const CASE_EMB: &str = "emb.case";
    pub const TYPE_LSTM_W: &str = "type.lstm.w";
    pub const TYPE_LSTM_B: &str = "type.lstm.b";
    pub const TYPE_OUT: &str = "type.out";
    pub const DEC_INIT_W: &str = "dec.init.w";
    pub const DEC_INIT_B: &str = "dec.init.b";
    pub const DEC_LSTM_W: &str = "dec.lstm.w";
    pub const DEC_LSTM_B: &str = "dec.lstm.b";
    pub const ATTN_WS: &str = "attn.ws";
    pub const ATTN_WH: &str = "attn.wh";
    pub const ATTN_V: &str = "attn.v";
    pub const OUT_V1: &str = "out.v1";
    pub const OUT_B1: &str = "out.b1";
    pub const OUT_V2: &str = "out.v2";
    pub const OUT_B2: &str = "out.b2";
    pub const GATE_W: &str = "gate.w";
    pub const GATE_B: &str = "gate.b";

    pub fn encoder(layer: usize, dir: &str) -> (String, String) {
        (
            format!("enc.l{layer}.{dir}.w"),
            format!("enc.l{layer}.{dir}.b"),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Embedding,
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    fn embedding(name: &str, rows: usize, cols: usize) -> Self {
        ParamSpec {
            name: name.into(),
            shape: vec![rows, cols],
            init: InitKind::Embedding,
        }
    }

    fn weight(name: String, shape: Vec<usize>) -> Self {
        ParamSpec {
            name,
            shape,
            init: InitKind::Weight,
        }
    }

    fn bias(name: String, n: usize) -> Self {
        ParamSpec {
            name,
            shape: vec![n],
            init: InitKind::Bias,
        }
    }
}

pub const WEIGHT_INIT_RANGE: f64 = 0.08;
pub const EMBEDDING_INIT_RANGE: f64 = 0.1;

/// Every learnable tensor, keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Arc<Tensor>>,
}

impl ModelParams {
    /// Uniform(±0.08) weights, zero biases, uniform(±0.1) embeddings.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        Self::init_scaled(config, rng, 1.0)
    }

    /// As [`ModelParams::init`] with every range multiplied by `scale`;
    /// with `scale > 0` biases are drawn from the weight range too.
    pub fn init_scaled<R: Rng>(config: &ModelConfig, rng: &mut R, scale: f64) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for spec in config.param_specs() {
            let n: usize = spec.shape.iter().product();
            let range = match spec.init {
                InitKind::Embedding => EMBEDDING_INIT_RANGE * scale,
                InitKind::Weight => WEIGHT_INIT_RANGE * scale,
                InitKind::Bias if scale == 1.0 => 0.0,
                InitKind::Bias => WEIGHT_INIT_RANGE * scale,
            };
            let data: Vec<f64> = if range == 0.0 {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-range..range)).collect()
            };
            tensors.insert(spec.name, Arc::new(Tensor::new(spec.shape, data)?));
        }
        Ok(ModelParams { tensors })
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        ModelParams {
            tensors: tensors.into_iter().map(|(k, v)| (k, Arc::new(v))).collect(),
        }
    }

    /// Checks names and shapes against `config`, and that all entries are finite.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let specs = config.param_specs();
        for spec in &specs {
            let t = self.tensors.get(&spec.name).ok_or_else(|| Error::Param {
                name: spec.name.clone(),
                message: "missing".into(),
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Param {
                    name: spec.name.clone(),
                    message: format!("shape {:?}, expected {:?}", t.shape(), spec.shape),
                });
            }
            if !t.is_finite() {
                return Err(Error::Param {
                    name: spec.name.clone(),
                    message: "non-finite entries".into(),
                });
            }
        }
        if let Some(extra) = self
            .tensors
            .keys()
            .find(|k| !specs.iter().any(|s| &s.name == *k))
        {
            return Err(Error::Param {
                name: extra.clone(),
                message: "unexpected tensor".into(),
            });
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Tensor>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name).map(Arc::make_mut)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors
            .iter_mut()
            .map(|(k, v)| (k.as_str(), Arc::make_mut(v)))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Copies pretrained rows into the word embedding table; returns rows set.
    pub fn load_word_vectors(
        &mut self,
        vocab: &Vocabulary,
        vectors: &HashMap<String, Vec<f64>>,
    ) -> Result<usize> {
        let table = self.get_mut(names::WORD_EMB).ok_or_else(|| Error::Param {
            name: names::WORD_EMB.into(),
            message: "missing".into(),
        })?;
        let dim = table.cols();
        let mut set = 0;
        for (id, word) in vocab.words().iter().enumerate() {
            if let Some(v) = vectors.get(word) {
                if v.len() != dim {
                    return Err(Error::Config(format!(
                        "pretrained dimension {} does not match word_dim {dim}",
                        v.len()
                    )));
                }
                table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(v);
                set += 1;
            }
        }
        Ok(set)
    }
}

/// Vocabulary and tag sets used to index embedding tables.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub vocab: Vocabulary,
    pub pos: TagSet,
    pub ner: TagSet,
}

impl Lexicon {
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            pos_size: self.pos.len(),
            ner_size: self.ner.len(),
            ..base.clone()
        }
    }
}

/// A graph plus lazily bound parameter leaves.
pub struct Session<'p> {
    pub graph: Graph,
    params: &'p ModelParams,
    bound: HashMap<&'p str, Var>,
}

impl<'p> Session<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Session {
            graph: Graph::new(),
            params,
            bound: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ModelParams {
        self.params
    }

    /// Leaf for the named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let (key, t) = self
            .params
            .tensors
            .get_key_value(name)
            .ok_or_else(|| Error::Param {
                name: name.into(),
                message: "missing".into(),
            })?;
        let v = self.graph.leaf_shared(Arc::clone(t));
        self.bound.insert(key.as_str(), v);
        Ok(v)
    }

    pub fn lstm(&mut self, w: &str, b: &str) -> Result<LstmWeights> {
        Ok(LstmWeights {
            w: self.param(w)?,
            b: self.param(b)?,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Gradients of every bound parameter after a backward pass.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(k, &v)| (k.to_string(), self.graph.grad(v)))
            .collect()
    }
}
