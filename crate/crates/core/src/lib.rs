//! Reference resolution in visually grounded dialogue by generating a
//! description of each referent and retrieving the image it best matches.
//!
//! The numeric core is generic over [`scalar::Scalar`]; the aliases below
//! fix it to `f32` or `f64`. Random-baseline expectations can also be
//! computed exactly with [`Exact`].

pub mod context;
pub mod corpus;
pub mod describers;
pub mod eval;
pub mod retrieval;
pub mod scalar;
pub mod synth;
pub mod tokenize;

/// Exact rational numbers for closed-form expectations.
pub type Exact = num_rational::Rational64;

pub type TextEmbeddingF32 = retrieval::TextEmbedding<f32>;
pub type TextEmbeddingF64 = retrieval::TextEmbedding<f64>;
pub type CandidateMatrixF32 = retrieval::CandidateMatrix<f32>;
pub type CandidateMatrixF64 = retrieval::CandidateMatrix<f64>;
pub type RetrievalResultF32 = retrieval::RetrievalResult<f32>;
pub type RetrievalResultF64 = retrieval::RetrievalResult<f64>;
pub type EmbeddingCacheF32 = retrieval::EmbeddingCache<f32>;
pub type EmbeddingCacheF64 = retrieval::EmbeddingCache<f64>;
