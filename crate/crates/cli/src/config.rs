//! Pipeline configuration: one TOML document, overridable from the command
//! line with `--set key.path=value`.

use crate::error::{CliError, CliResult};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base RNG seed; mandatory so every run is reproducible.
    pub seed: u64,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub phantom: PhantomSection,
    #[serde(default)]
    pub register: RegisterSection,
    #[serde(default)]
    pub translate: TranslateSection,
    #[serde(default)]
    pub segment: SegmentSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub ablate: AblateSection,
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSection {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "d_n_vertebrae")]
    pub n_vertebrae: usize,
    #[serde(default = "d_body_radius")]
    pub body_radius: f64,
    #[serde(default = "d_body_height")]
    pub body_height: f64,
    #[serde(default = "d_disc_gap")]
    pub disc_gap: f64,
    #[serde(default = "d_process_length")]
    pub process_length: f64,
    #[serde(default = "d_process_width")]
    pub process_width: f64,
    #[serde(default)]
    pub curvature: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default = "d_spacing")]
    pub spacing: f64,
    /// When nonzero, also write a misaligned CT/label pair: rotation about
    /// the cranio-caudal axis through the column center, then translation.
    #[serde(default)]
    pub misalign_rotation_deg: f64,
    #[serde(default)]
    pub misalign_translation_mm: [f64; 3],
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_n_vertebrae() -> usize {
    5
}
fn d_body_radius() -> f64 {
    15.0
}
fn d_body_height() -> f64 {
    30.0
}
fn d_disc_gap() -> f64 {
    6.0
}
fn d_process_length() -> f64 {
    30.0
}
fn d_process_width() -> f64 {
    8.0
}
fn d_spacing() -> f64 {
    1.0
}

impl Default for PhantomSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegisterMode {
    OnePoint,
    TwoPoint,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSection {
    #[serde(default = "d_register_mode")]
    pub mode: RegisterMode,
    /// CT volume to align onto the fixed (MR) space.
    #[serde(default)]
    pub moving_ct: Option<PathBuf>,
    /// Landmark source for the moving side: a label volume (+ optional
    /// subregions), or a ready landmark file.
    #[serde(default)]
    pub moving_labels: Option<PathBuf>,
    #[serde(default)]
    pub moving_subregions: Option<PathBuf>,
    #[serde(default)]
    pub moving_landmarks: Option<PathBuf>,
    /// Landmark source for the fixed side.
    #[serde(default)]
    pub fixed_labels: Option<PathBuf>,
    #[serde(default)]
    pub fixed_subregions: Option<PathBuf>,
    #[serde(default)]
    pub fixed_landmarks: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn d_register_mode() -> RegisterMode {
    RegisterMode::TwoPoint
}

impl Default for RegisterSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "3d")]
    ThreeD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    SingleTarget,
    ScalarPosterior,
    Zero,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Noise,
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Ddim,
    Ddpm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranslateSection {
    #[serde(default)]
    pub mr: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "d_recipe")]
    pub recipe: Recipe,
    #[serde(default = "d_denoiser")]
    pub denoiser: DenoiserKind,
    /// Paired target volume for the single-target oracle denoiser.
    #[serde(default)]
    pub target: Option<PathBuf>,
    /// Directory of per-timestep predictions for the external denoiser.
    #[serde(default)]
    pub external_dir: Option<PathBuf>,
    /// Restrict the 2D recipe to slices whose labels are nonempty.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default = "d_mode")]
    pub mode: ModeName,
    #[serde(default = "d_method")]
    pub method: MethodName,
    #[serde(default = "d_eta")]
    pub eta: f64,
    /// Visited timesteps; when omitted, 20 for the 2D recipe and 25 for 3D.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Prior mean/std for the scalar-posterior oracle denoiser.
    #[serde(default)]
    pub posterior_mu: f64,
    #[serde(default = "d_posterior_sigma")]
    pub posterior_sigma0: f64,
    #[serde(default)]
    pub guidance_w: f64,
    #[serde(default = "d_clamp")]
    pub clamp_x0: bool,
    #[serde(default = "d_t_max")]
    pub t_max: usize,
    #[serde(default = "d_cosine_s")]
    pub cosine_s: f64,
    #[serde(default = "d_tile")]
    pub tile: usize,
    #[serde(default = "d_patch")]
    pub patch: [usize; 3],
    #[serde(default = "d_iso")]
    pub iso_spacing: f64,
}

fn d_recipe() -> Recipe {
    Recipe::TwoD
}
fn d_denoiser() -> DenoiserKind {
    DenoiserKind::SingleTarget
}
fn d_mode() -> ModeName {
    ModeName::Image
}
fn d_method() -> MethodName {
    MethodName::Ddim
}
fn d_eta() -> f64 {
    1.0
}
fn d_posterior_sigma() -> f64 {
    0.5
}
fn d_clamp() -> bool {
    true
}
fn d_t_max() -> usize {
    1000
}
fn d_cosine_s() -> f64 {
    0.008
}
fn d_tile() -> usize {
    256
}
fn d_patch() -> [usize; 3] {
    [128, 128, 32]
}
fn d_iso() -> f64 {
    1.0
}

impl Default for TranslateSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSection {
    #[serde(default)]
    pub ct: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "d_threshold")]
    pub bone_threshold: f32,
    #[serde(default = "d_min_component")]
    pub min_component_voxels: usize,
}

fn d_threshold() -> f32 {
    0.3
}
fn d_min_component() -> usize {
    100
}

impl Default for SegmentSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    #[serde(default)]
    pub reference_ct: Option<PathBuf>,
    #[serde(default)]
    pub reference_labels: Option<PathBuf>,
    #[serde(default)]
    pub reference_subregions: Option<PathBuf>,
    /// method name -> synthesized CT path.
    #[serde(default)]
    pub methods: std::collections::BTreeMap<String, PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "d_mask_radius")]
    pub mask_radius: f64,
    #[serde(default = "d_tile")]
    pub crop: usize,
    #[serde(default = "d_true")]
    pub posterior: bool,
    #[serde(default = "d_threshold")]
    pub bone_threshold: f32,
    #[serde(default = "d_min_component")]
    pub min_component_voxels: usize,
    #[serde(default = "d_boundary_fraction")]
    pub exclude_boundary_fraction: f64,
    #[serde(default)]
    pub exclude_sacrum_labels: Vec<u16>,
}

fn d_mask_radius() -> f64 {
    10.0
}
fn d_true() -> bool {
    true
}
fn d_boundary_fraction() -> f64 {
    0.5
}

impl Default for EvaluateSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default = "d_ablate_steps")]
    pub steps: Vec<usize>,
    #[serde(default = "d_ablate_eta")]
    pub eta: Vec<f64>,
    #[serde(default = "d_ablate_w")]
    pub w: Vec<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn d_ablate_steps() -> Vec<usize> {
    vec![10, 20, 50]
}
fn d_ablate_eta() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn d_ablate_w() -> Vec<f64> {
    vec![0.0]
}

impl Default for AblateSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

/// Apply one `--set key.path=value` override onto the raw TOML tree.
fn apply_override(root: &mut toml::Value, spec: &str) -> CliResult<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::validation(format!("--set needs key=value, got {spec:?}"))
    })?;
    // Parse the value as TOML; bare words fall back to strings.
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            CliError::validation(format!("--set {key}: {part} is not a table"))
        })?;
        if i == parts.len() - 1 {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!("loop returns on the last segment")
}

/// Load a config file, apply `--set` overrides and the optional seed
/// shortcut, then deserialize and validate.
pub fn load_config(
    path: &Path,
    overrides: &[String],
    seed: Option<u64>,
    jobs: Option<usize>,
) -> CliResult<PipelineConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read config {path:?}: {e}")))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::validation(format!("config {path:?}: {e}")))?;
    let mut tree = toml::Value::Table(table);
    for spec in overrides {
        apply_override(&mut tree, spec)?;
    }
    if let Some(s) = seed {
        apply_override(&mut tree, &format!("seed={s}"))?;
    }
    if let Some(j) = jobs {
        apply_override(&mut tree, &format!("jobs={j}"))?;
    }
    let cfg: PipelineConfig = tree
        .try_into()
        .map_err(|e| CliError::validation(format!("config {path:?}: {e}")))?;
    if cfg.jobs == 0 {
        return Err(CliError::validation("jobs must be >= 1"));
    }
    Ok(cfg)
}

/// Fail fast when a configured input path does not resolve.
pub fn require_file(path: &Option<PathBuf>, what: &str) -> CliResult<PathBuf> {
    let p = path
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("config is missing {what}")))?;
    if !p.exists() {
        return Err(CliError::validation(format!(
            "{what} {p:?} does not exist"
        )));
    }
    Ok(p.clone())
}
