pub mod ablate;
pub mod evaluate;
pub mod phantom;
pub mod register;
pub mod segment;
pub mod translate;

use crate::error::{CliError, CliResult};
use std::path::Path;

/// Read a scalar volume, promoting HU/MR inputs to the normalized space the
/// samplers and the segmenter work in.
pub fn read_normalized(path: &Path) -> CliResult<spinesynth::Volume> {
    let v = spinesynth::nifti::read_volume(path)?;
    let out = match v.intensity_space {
        spinesynth::IntensitySpace::Normalized => v,
        spinesynth::IntensitySpace::Hounsfield => spinesynth::preprocess::normalize_ct(&v)?,
        spinesynth::IntensitySpace::MrRaw => spinesynth::preprocess::normalize_mr(&v)?,
    };
    Ok(out)
}

/// Stable per-item RNG stream derived from the base seed.
pub fn item_rng(base_seed: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(
        base_seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15),
    )
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("cannot create {dir:?}: {e}")))
}
