//! Synthetic try-on data: procedural scenes, preprocessing, evaluation
//! pairing, and on-disk persistence.

pub mod pairing;
pub mod preprocess;
pub mod scene;
pub mod store;

pub use pairing::{pair_for_eval, EvalPair, PAIRS_PER_PERSON};
pub use preprocess::{
    make_agnostic, make_garment_inputs, render_pose_map, render_pose_video, ConditionInput, NullFlags,
    PreprocessOptions, TryOnConditioning,
};
pub use scene::{generate_scene, Joint, Region, SyntheticScene, NUM_JOINTS};
pub use store::{generate_scenes, load_dataset, save_dataset, DataParams};
