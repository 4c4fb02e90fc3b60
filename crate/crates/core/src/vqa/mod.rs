pub mod model;
pub mod regions;

pub use model::{
    build_answer_vocab, train_vqa, AnswerDistribution, AnswerVocab, VqaConfig, VqaExample, VqaModel,
};
pub use regions::{extract_grid_features, load_regions, save_regions, Raster, RegionFeatures, RegionSource};
