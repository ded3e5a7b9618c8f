//! Model persistence and figure rendering.

pub mod hinton;
pub mod model_file;

pub use hinton::{hinton_svg, HintonSpec, HintonView};
pub use model_file::{load_model, save_model, ModelFile, ModelMeta, FORMAT_VERSION};
