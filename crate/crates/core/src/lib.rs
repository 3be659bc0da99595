pub mod features;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod numfmt;
pub mod packet;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod text;

pub use scalar::Scalar;

pub type Gpt32 = models::gpt::Gpt<f32>;
pub type Gpt64 = models::gpt::Gpt<f64>;
pub type Bert32 = models::bert::Bert<f32>;
pub type Bert64 = models::bert::Bert<f64>;
pub type Lstm32 = models::lstm::LstmClassifier<f32>;
pub type Lstm64 = models::lstm::LstmClassifier<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
