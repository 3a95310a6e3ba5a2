//! Model parameters, initialization, and the forward computation for the
//! topic-attention network and its two ablation variants.

mod forward;
mod gru;

pub use forward::{forward_sentence, BoundModel, ForwardOutput, SentenceOnTape};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryInventory, EmbeddingTable};
use crate::numerics::{Scalar, Tensor};

/// Which architecture the parameters describe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Topic attention with squash heads; probabilities are vector lengths.
    #[default]
    Tan,
    /// Single attention, ReLU hidden layer, sigmoid outputs.
    Va,
    /// Topic attention with ReLU heads and sigmoid outputs (no squash).
    Taws,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Tan => write!(f, "tan"),
            Variant::Va => write!(f, "va"),
            Variant::Taws => write!(f, "taws"),
        }
    }
}

/// Structural hyperparameters. The topic dimension is always twice the
/// GRU hidden size (forward and backward states concatenated).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub topics: usize,
    /// Squashed size of the per-topic projection.
    pub p1: usize,
    /// Squashed size of the per-category projection.
    pub p2: usize,
    /// Hidden layer width of the single-attention variant.
    pub va_hidden: usize,
    pub dropout: f64,
    /// Reproduce the paper's literal candidate-state formula, which reuses
    /// the update gate's weights and has no reset gate.
    pub literal_eq3: bool,
    /// One projection shared by all topics instead of one per topic.
    pub shared_topic_heads: bool,
    pub fine_tune_embeddings: bool,
}

impl ModelConfig {
    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden
    }

    /// Number of attention rows: one per topic, or a single one for the
    /// single-attention variant.
    pub fn attention_rows(&self) -> usize {
        match self.variant {
            Variant::Va => 1,
            _ => self.topics,
        }
    }
}

/// Fully connected layer; the weight is stored input-major (in × out).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            weight: xavier(&[in_dim, out_dim], in_dim, out_dim, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

/// One direction of the encoder. Input-to-hidden weights are
/// `embedding_dim × hidden`, hidden-to-hidden `hidden × hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruDirection<T> {
    pub w_ir: Tensor<T>,
    pub w_iz: Tensor<T>,
    pub w_in: Tensor<T>,
    pub w_hr: Tensor<T>,
    pub w_hz: Tensor<T>,
    pub w_hn: Tensor<T>,
    pub b_ir: Tensor<T>,
    pub b_iz: Tensor<T>,
    pub b_in: Tensor<T>,
    pub b_hr: Tensor<T>,
    pub b_hz: Tensor<T>,
    pub b_hn: Tensor<T>,
}

impl<T: Scalar> GruDirection<T> {
    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        GruDirection {
            w_ir: xavier(&[input, hidden], input, hidden, rng),
            w_iz: xavier(&[input, hidden], input, hidden, rng),
            w_in: xavier(&[input, hidden], input, hidden, rng),
            w_hr: xavier(&[hidden, hidden], hidden, hidden, rng),
            w_hz: xavier(&[hidden, hidden], hidden, hidden, rng),
            w_hn: xavier(&[hidden, hidden], hidden, hidden, rng),
            b_ir: Tensor::zeros(&[hidden]),
            b_iz: Tensor::zeros(&[hidden]),
            b_in: Tensor::zeros(&[hidden]),
            b_hr: Tensor::zeros(&[hidden]),
            b_hz: Tensor::zeros(&[hidden]),
            b_hn: Tensor::zeros(&[hidden]),
        }
    }
}

/// Variant-specific parameters above the shared encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Tan {
        /// k × encoder_dim attention directions.
        topics: Tensor<T>,
        /// One projection per topic (or a single shared one).
        topic_proj: Vec<Dense<T>>,
        /// One projection per category.
        category_proj: Vec<Dense<T>>,
    },
    Va {
        /// 1 × encoder_dim attention direction.
        attention: Tensor<T>,
        hidden: Dense<T>,
        output: Dense<T>,
    },
    Taws {
        topics: Tensor<T>,
        topic_proj: Vec<Dense<T>>,
        output: Dense<T>,
    },
}

impl<T: Scalar> Head<T> {
    /// The attention matrix: topic rows, or the single attention row.
    pub fn attention_matrix(&self) -> &Tensor<T> {
        match self {
            Head::Tan { topics, .. } | Head::Taws { topics, .. } => topics,
            Head::Va { attention, .. } => attention,
        }
    }

    /// Topic rows subject to the orthogonality penalty; the
    /// single-attention variant has none.
    pub fn topics(&self) -> Option<&Tensor<T>> {
        match self {
            Head::Tan { topics, .. } | Head::Taws { topics, .. } => Some(topics),
            Head::Va { .. } => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TanModel<T> {
    pub config: ModelConfig,
    pub inventory: CategoryInventory,
    pub embeddings: EmbeddingTable<T>,
    pub gru_fwd: GruDirection<T>,
    pub gru_bwd: GruDirection<T>,
    pub head: Head<T>,
}

fn xavier<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::rand_uniform(shape, -a, a, rng)
}

/// Attention rows are redrawn until none is numerically degenerate, so
/// the orthogonality penalty is always defined at initialization.
fn init_attention_rows<T: Scalar>(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let a = (6.0 / (rows + dim) as f64).sqrt();
    let mut t: Tensor<T> = Tensor::rand_uniform(&[rows, dim], -a, a, rng);
    for r in 0..rows {
        while Tensor::vector(t.row(r).to_vec()).norm().as_f64() < 1e-6 {
            let fresh = Tensor::<T>::rand_uniform(&[dim], -a, a, rng);
            let start = r * dim;
            t.data_mut()[start..start + dim].copy_from_slice(fresh.data());
        }
    }
    t
}

impl<T: Scalar> TanModel<T> {
    /// All weights uniform(−a, a) with a = √(6/(fan_in+fan_out)), biases
    /// zero; deterministic per seed.
    pub fn init(
        config: ModelConfig,
        inventory: CategoryInventory,
        embeddings: EmbeddingTable<T>,
        seed: u64,
    ) -> Self {
        assert_eq!(config.embedding_dim, embeddings.dim());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.encoder_dim();
        let categories = inventory.len();
        let gru_fwd = GruDirection::init(config.embedding_dim, config.hidden, &mut rng);
        let gru_bwd = GruDirection::init(config.embedding_dim, config.hidden, &mut rng);
        let n_proj = if config.shared_topic_heads {
            1
        } else {
            config.topics
        };
        let head = match config.variant {
            Variant::Tan => Head::Tan {
                topics: init_attention_rows(config.topics, d, &mut rng),
                topic_proj: (0..n_proj)
                    .map(|_| Dense::init(d, config.p1, &mut rng))
                    .collect(),
                category_proj: (0..categories)
                    .map(|_| Dense::init(config.topics * config.p1, config.p2, &mut rng))
                    .collect(),
            },
            Variant::Va => Head::Va {
                attention: init_attention_rows(1, d, &mut rng),
                hidden: Dense::init(d, config.va_hidden, &mut rng),
                output: Dense::init(config.va_hidden, categories, &mut rng),
            },
            Variant::Taws => Head::Taws {
                topics: init_attention_rows(config.topics, d, &mut rng),
                topic_proj: (0..n_proj)
                    .map(|_| Dense::init(d, config.p1, &mut rng))
                    .collect(),
                output: Dense::init(config.topics * config.p1, categories, &mut rng),
            },
        };
        TanModel {
            config,
            inventory,
            embeddings,
            gru_fwd,
            gru_bwd,
            head,
        }
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Canonical parameter enumeration. Binding a model to a tape, the
    /// optimizer, the checkpoint writer, and the gradient checker all rely
    /// on this one ordering.
    pub fn visit_params(&self, f: &mut impl FnMut(&str, &Tensor<T>)) {
        if self.config.fine_tune_embeddings {
            f("embedding", self.embeddings.matrix());
        }
        for (prefix, dir) in [("gru_fwd", &self.gru_fwd), ("gru_bwd", &self.gru_bwd)] {
            f(&format!("{prefix}.w_ir"), &dir.w_ir);
            f(&format!("{prefix}.w_iz"), &dir.w_iz);
            f(&format!("{prefix}.w_in"), &dir.w_in);
            f(&format!("{prefix}.w_hr"), &dir.w_hr);
            f(&format!("{prefix}.w_hz"), &dir.w_hz);
            f(&format!("{prefix}.w_hn"), &dir.w_hn);
            f(&format!("{prefix}.b_ir"), &dir.b_ir);
            f(&format!("{prefix}.b_iz"), &dir.b_iz);
            f(&format!("{prefix}.b_in"), &dir.b_in);
            f(&format!("{prefix}.b_hr"), &dir.b_hr);
            f(&format!("{prefix}.b_hz"), &dir.b_hz);
            f(&format!("{prefix}.b_hn"), &dir.b_hn);
        }
        match &self.head {
            Head::Tan {
                topics,
                topic_proj,
                category_proj,
            } => {
                f("topics", topics);
                for (i, p) in topic_proj.iter().enumerate() {
                    f(&format!("topic_proj.{i}.weight"), &p.weight);
                    f(&format!("topic_proj.{i}.bias"), &p.bias);
                }
                for (c, p) in category_proj.iter().enumerate() {
                    f(&format!("category_proj.{c}.weight"), &p.weight);
                    f(&format!("category_proj.{c}.bias"), &p.bias);
                }
            }
            Head::Va {
                attention,
                hidden,
                output,
            } => {
                f("attention", attention);
                f("hidden.weight", &hidden.weight);
                f("hidden.bias", &hidden.bias);
                f("output.weight", &output.weight);
                f("output.bias", &output.bias);
            }
            Head::Taws {
                topics,
                topic_proj,
                output,
            } => {
                f("topics", topics);
                for (i, p) in topic_proj.iter().enumerate() {
                    f(&format!("topic_proj.{i}.weight"), &p.weight);
                    f(&format!("topic_proj.{i}.bias"), &p.bias);
                }
                f("output.weight", &output.weight);
                f("output.bias", &output.bias);
            }
        }
    }

    /// Mutable traversal in the same canonical order as [`Self::visit_params`].
    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<T>)) {
        if self.config.fine_tune_embeddings {
            f("embedding", self.embeddings.matrix_mut());
        }
        for (prefix, dir) in [
            ("gru_fwd", &mut self.gru_fwd),
            ("gru_bwd", &mut self.gru_bwd),
        ] {
            f(&format!("{prefix}.w_ir"), &mut dir.w_ir);
            f(&format!("{prefix}.w_iz"), &mut dir.w_iz);
            f(&format!("{prefix}.w_in"), &mut dir.w_in);
            f(&format!("{prefix}.w_hr"), &mut dir.w_hr);
            f(&format!("{prefix}.w_hz"), &mut dir.w_hz);
            f(&format!("{prefix}.w_hn"), &mut dir.w_hn);
            f(&format!("{prefix}.b_ir"), &mut dir.b_ir);
            f(&format!("{prefix}.b_iz"), &mut dir.b_iz);
            f(&format!("{prefix}.b_in"), &mut dir.b_in);
            f(&format!("{prefix}.b_hr"), &mut dir.b_hr);
            f(&format!("{prefix}.b_hz"), &mut dir.b_hz);
            f(&format!("{prefix}.b_hn"), &mut dir.b_hn);
        }
        match &mut self.head {
            Head::Tan {
                topics,
                topic_proj,
                category_proj,
            } => {
                f("topics", topics);
                for (i, p) in topic_proj.iter_mut().enumerate() {
                    f(&format!("topic_proj.{i}.weight"), &mut p.weight);
                    f(&format!("topic_proj.{i}.bias"), &mut p.bias);
                }
                for (c, p) in category_proj.iter_mut().enumerate() {
                    f(&format!("category_proj.{c}.weight"), &mut p.weight);
                    f(&format!("category_proj.{c}.bias"), &mut p.bias);
                }
            }
            Head::Va {
                attention,
                hidden,
                output,
            } => {
                f("attention", attention);
                f("hidden.weight", &mut hidden.weight);
                f("hidden.bias", &mut hidden.bias);
                f("output.weight", &mut output.weight);
                f("output.bias", &mut output.bias);
            }
            Head::Taws {
                topics,
                topic_proj,
                output,
            } => {
                f("topics", topics);
                for (i, p) in topic_proj.iter_mut().enumerate() {
                    f(&format!("topic_proj.{i}.weight"), &mut p.weight);
                    f(&format!("topic_proj.{i}.bias"), &mut p.bias);
                }
                f("output.weight", &mut output.weight);
                f("output.bias", &mut output.bias);
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name.to_string()));
        names
    }

    pub fn param_tensors(&self) -> Vec<Tensor<T>> {
        let mut tensors = Vec::new();
        self.visit_params(&mut |_, t| tensors.push(t.clone()));
        tensors
    }

    pub fn set_params(&mut self, tensors: &[Tensor<T>]) {
        let mut i = 0;
        self.visit_params_mut(&mut |_, t| {
            assert_eq!(t.shape(), tensors[i].shape());
            *t = tensors[i].clone();
            i += 1;
        });
        assert_eq!(i, tensors.len(), "parameter count mismatch");
    }

    /// Reorders topics together with their heads: topic rows, the
    /// per-topic projections, and the matching row blocks of every layer
    /// consuming the concatenated topic representation. Category
    /// probabilities are invariant under this permutation.
    pub fn permute_topics(&mut self, perm: &[usize]) {
        let k = self.config.topics;
        let p1 = self.config.p1;
        assert_eq!(perm.len(), k);
        let permute_rows = |t: &Tensor<T>| -> Tensor<T> {
            let mut data = Vec::with_capacity(t.numel());
            for &src in perm {
                data.extend_from_slice(t.row(src));
            }
            Tensor::matrix(t.rows(), t.cols(), data).expect("same shape")
        };
        // Rows i·p1..(i+1)·p1 of a consuming weight belong to topic i.
        let permute_blocks = |w: &Tensor<T>| -> Tensor<T> {
            let cols = w.cols();
            let mut data = Vec::with_capacity(w.numel());
            for &src in perm {
                for r in 0..p1 {
                    data.extend_from_slice(w.row(src * p1 + r));
                }
            }
            Tensor::matrix(w.rows(), cols, data).expect("same shape")
        };
        match &mut self.head {
            Head::Tan {
                topics,
                topic_proj,
                category_proj,
            } => {
                *topics = permute_rows(topics);
                if topic_proj.len() == k {
                    let old = topic_proj.clone();
                    for (dst, &src) in perm.iter().enumerate() {
                        topic_proj[dst] = old[src].clone();
                    }
                }
                for p in category_proj {
                    p.weight = permute_blocks(&p.weight);
                }
            }
            Head::Taws {
                topics,
                topic_proj,
                output,
            } => {
                *topics = permute_rows(topics);
                if topic_proj.len() == k {
                    let old = topic_proj.clone();
                    for (dst, &src) in perm.iter().enumerate() {
                        topic_proj[dst] = old[src].clone();
                    }
                }
                output.weight = permute_blocks(&output.weight);
            }
            Head::Va { .. } => {}
        }
    }
}
