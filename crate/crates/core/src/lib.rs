//! Softmax attention `D⁻¹·exp(QKᵀ/d)·V`, computed exactly and by three
//! approximations:
//!
//! * a polynomial low-rank engine (`exp` replaced by a fitted polynomial,
//!   expanded into monomial factors `U₁U₂ᵀ`),
//! * a single-threshold support-basis engine that computes rows and columns
//!   touched by large query/key entries exactly and the rest polynomially,
//! * a bucketed engine that normalizes rows per magnitude bucket and uses
//!   sketched polynomial kernels per block.
//!
//! ```
//! use sbattn::{exact_attention, approx_attention_single, sample_subgaussian, AttentionInputs};
//!
//! let q = sample_subgaussian(64, 8, 0.1, 1).unwrap();
//! let k = sample_subgaussian(64, 8, 0.1, 2).unwrap();
//! let v = sample_subgaussian(64, 8, 1.0, 3).unwrap();
//! let inp = AttentionInputs::new(q, k, v).unwrap();
//! let exact = exact_attention(&inp).unwrap();
//! let approx = approx_attention_single(&inp, 0.2, 1e-8).unwrap();
//! let err = exact.p.sub(&approx.p).unwrap().max_abs();
//! assert!(err <= 4e-8 * inp.v.max_abs());
//! ```

pub mod attention;
pub mod bucket;
pub mod error;
pub mod exp_poly;
pub mod matrix;
pub mod multi;
pub mod sketch;
pub mod support;

pub use attention::{
    approx_attention_single, exact_attention, gaussian_kde_single, kde_parts, normalize_dense,
    poly_attention_as23, verify_normalization_error, AttentionInputs, AttentionOutput, Engine,
    EngineStats, KdeParts,
};
pub use bucket::{
    bucket_count, bucket_scheme, decompose_blocks, expand_block, single_bucket_scheme,
    BucketScheme, NormalizedBlock,
};
pub use error::{Error, Result};
pub use exp_poly::{
    basis_size, binomial, build_low_rank_factors, build_low_rank_factors_checked,
    enumerate_monomials, enumerate_monomials_capped, eval_poly_gram_oracle, fit_exp_polynomial,
    fit_exp_polynomial_capped, fit_exp_polynomial_degree, multinomial, rank_bound, ExpPolynomial,
    LowRankFactors, MonomialBasis,
};
pub use matrix::{
    are_disjoint, entrywise_exp, hadamard_pow, matmul, matmul_transa, matmul_transb, norm,
    sparse_apply, support, DenseMatrix, HasSupport, Norm, SparseMatrix, SupportPattern,
};
pub use multi::{
    approx_attention_multi, approx_attention_multi_with_scheme, attention_error_envelope,
    even_degree, multi_reference_oracle, multi_unsketched, BlockReport, MultiConfig, MultiOutput,
    ReferenceOutput,
};
pub use sketch::{
    sketch_error_bound, sketch_feature_map, sketch_width, sketched_poly_kernel, Sketch, SketchSpec,
};
pub use support::{
    alpha_hat, build_large_mask, compute_a_l, compute_a_s_dense, default_threshold,
    expected_large_count, gaussian_variance_proxy, sample_subgaussian, sparsity_report, split,
    LargeMask, MaskRow, SparsityReport, ThresholdSplit,
};
