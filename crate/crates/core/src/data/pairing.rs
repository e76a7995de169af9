use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use crate::error::{invalid_arg, Result};

/// Garment frames drawn per person clip.
pub const PAIRS_PER_PERSON: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalPair {
    pub person_scene: usize,
    pub garment_scene: usize,
    pub garment_frame: usize,
}

/// Pairs every person clip with garment frames from `per_person` distinct
/// other clips.
pub fn pair_for_eval(scenes: &[SyntheticScene], seed: u64, per_person: usize) -> Result<Vec<EvalPair>> {
    if scenes.len() < 2 {
        invalid_arg!("pairing needs at least 2 scenes, got {}", scenes.len());
    }
    if per_person > scenes.len() - 1 {
        invalid_arg!(
            "cannot draw {per_person} distinct garment clips from {} other scenes",
            scenes.len() - 1
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(scenes.len() * per_person);
    for person in 0..scenes.len() {
        let mut others: Vec<usize> = (0..scenes.len()).filter(|&i| i != person).collect();
        others.shuffle(&mut rng);
        for &g in &others[..per_person] {
            pairs.push(EvalPair {
                person_scene: person,
                garment_scene: g,
                garment_frame: rng.gen_range(0..scenes[g].num_frames()),
            });
        }
    }
    Ok(pairs)
}
