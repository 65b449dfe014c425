//! ScaleGNN: pure-hop adjacency distillation, adaptive multi-hop fusion and
//! LCS-based neighbor masking for transductive node classification.

pub mod cache;
pub mod checkpoint;
pub mod data;
pub mod dense;
pub mod error;
pub mod fixtures;
pub mod gradcheck;
pub mod hops;
pub mod lcs;
pub mod model;
pub mod sparse;
pub mod sweep;
pub mod train;

pub use data::{load_canonical, micro_macro_f1, save_canonical, Dataset, Split, Splits};
pub use dense::{DenseMatrix, RowSparse};
pub use error::{Error, Result};
pub use hops::{build_hopset, build_hopset_with, fuse_hops, softmax_weights, HopSet, HopWeights, Normalization};
pub use lcs::{
    build_mask, lcs_penalty, lcs_scores, sc_value, top_m_filter, update_retention, HopMask, MaskState, RetentionRule,
    RetentionSchedule, UNLIMITED,
};
pub use model::{forward, init_params, Artifacts, Mode, ModelDims, ModelParams, Precision};
pub use sparse::{bool_spmm, csr_from_edges, sym_normalize, SparseMatrix};
pub use train::{backward, cross_entropy, optimizer_step, total_loss, train_loop, AdamState, TrainConfig};
