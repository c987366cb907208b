//! Pipeline configuration: one TOML file, command-line overrides for the
//! seed, output directory and thread count. Every stage derives its RNG
//! from the root seed by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_CONFIG: &str = include_str!("../data/default_config.toml");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// 0 = library default thread pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub input: InputConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub disparity: DisparityConfig,
}

fn default_seed() -> u64 {
    20240809
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    /// Directory holding responses.csv, covariates.csv, groups.csv and
    /// scoring_rules.csv. Empty: `<out_dir>/cohort` (where `simulate`
    /// writes).
    #[serde(default)]
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_groups")]
    pub groups: Vec<GroupConfig>,
}

fn default_n() -> usize {
    930
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub label: String,
    pub weight: f64,
    /// Injected class-logit disparity for classes 2..C (zeros = null).
    #[serde(default)]
    pub effect: Vec<f64>,
}

fn default_groups() -> Vec<GroupConfig> {
    vec![
        GroupConfig { label: "white".into(), weight: 0.41, effect: vec![] },
        GroupConfig { label: "black".into(), weight: 0.44, effect: vec![] },
        GroupConfig { label: "latinx".into(), weight: 0.15, effect: vec![] },
    ]
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { n: default_n(), groups: default_groups() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    #[serde(default = "default_threshold")]
    pub rare_threshold: f64,
    /// Item held out of every fitted model and used for validation.
    #[serde(default = "default_heldout")]
    pub heldout_item: String,
}

fn default_threshold() -> f64 {
    0.02
}

fn default_heldout() -> String {
    "psychosocial_quarterly".into()
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { rare_threshold: default_threshold(), heldout_item: default_heldout() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchingConfig {
    /// Discretized covariates balanced across groups. Covariates on the
    /// causal pathway (like state of residence) belong in `exclude`, not
    /// here.
    #[serde(default = "default_match_covariates")]
    pub covariates: Vec<String>,
    /// Covariates deliberately left unbalanced.
    #[serde(default = "default_excluded")]
    pub exclude: Vec<String>,
    /// Numeric covariates cut at quartiles before matching.
    #[serde(default)]
    pub quartile: Vec<String>,
    #[serde(default = "default_template_size")]
    pub template_size: usize,
    #[serde(default = "default_group_size")]
    pub per_group_size: usize,
}

fn default_match_covariates() -> Vec<String> {
    vec!["age_q".into(), "comorbidity".into()]
}

fn default_excluded() -> Vec<String> {
    vec!["state".into()]
}

fn default_template_size() -> usize {
    240
}

fn default_group_size() -> usize {
    80
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            covariates: default_match_covariates(),
            exclude: default_excluded(),
            quartile: vec![],
            template_size: default_template_size(),
            per_group_size: default_group_size(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    LatentClass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_family")]
    pub family: Family,
    /// Trait counts fitted for the Normal family.
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    /// Class-count scan range (inclusive).
    #[serde(default = "default_classes")]
    pub classes: [usize; 2],
    /// 0 = class count chosen by BIC from the scan.
    #[serde(default)]
    pub selected_classes: usize,
    /// Per-item trait indices (0-based). Empty = derive from the factor
    /// loadings (highest |loading| per item).
    #[serde(default)]
    pub allocation: Vec<usize>,
    /// 0 = per-dimension default.
    #[serde(default)]
    pub quad_points: usize,
    #[serde(default = "default_qmc")]
    pub qmc_points: usize,
    #[serde(default = "default_starts")]
    pub random_starts: usize,
    #[serde(default = "default_max_iters")]
    pub max_em_iters: usize,
    /// Fit on the matched sample (requires `match` output).
    #[serde(default = "default_true")]
    pub use_matched: bool,
}

fn default_family() -> Family {
    Family::LatentClass
}

fn default_dims() -> Vec<usize> {
    vec![1, 2]
}

fn default_classes() -> [usize; 2] {
    [1, 5]
}

fn default_qmc() -> usize {
    2000
}

fn default_starts() -> usize {
    10
}

fn default_max_iters() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            family: default_family(),
            dims: default_dims(),
            classes: default_classes(),
            selected_classes: 0,
            allocation: vec![],
            quad_points: 0,
            qmc_points: default_qmc(),
            random_starts: default_starts(),
            max_em_iters: default_max_iters(),
            use_matched: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuralKind {
    Multinomial,
    Cumulative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisparityConfig {
    #[serde(default = "default_reference")]
    pub reference_group: String,
    #[serde(default = "default_structural")]
    pub structural: StructuralKind,
}

fn default_reference() -> String {
    "white".into()
}

fn default_structural() -> StructuralKind {
    StructuralKind::Multinomial
}

impl Default for DisparityConfig {
    fn default() -> Self {
        Self { reference_group: default_reference(), structural: default_structural() }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?,
            None => DEFAULT_CONFIG.to_string(),
        };
        let config: Config = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.simulate.n == 0 {
            return Err(CliError::Usage("simulate.n must be positive".into()));
        }
        if self.simulate.groups.is_empty() {
            return Err(CliError::Usage("simulate.groups must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.preprocess.rare_threshold)
            || self.preprocess.rare_threshold <= 0.0
        {
            return Err(CliError::Usage("preprocess.rare_threshold must be in (0, 1)".into()));
        }
        if self.model.classes[0] == 0 || self.model.classes[0] > self.model.classes[1] {
            return Err(CliError::Usage("model.classes must be a non-empty 1-based range".into()));
        }
        if self.matching.per_group_size == 0 || self.matching.template_size == 0 {
            return Err(CliError::Usage("matching sizes must be positive".into()));
        }
        for cov in &self.matching.covariates {
            if self.matching.exclude.contains(cov) {
                return Err(CliError::Usage(format!(
                    "covariate '{cov}' is both balanced and excluded"
                )));
            }
        }
        Ok(())
    }

    /// Directory with the raw cohort files.
    pub fn cohort_dir(&self) -> PathBuf {
        if self.input.dir.as_os_str().is_empty() {
            self.out_dir.join("cohort")
        } else {
            self.input.dir.clone()
        }
    }

    pub fn processed_dir(&self) -> PathBuf {
        self.out_dir.join("processed")
    }

    pub fn match_dir(&self) -> PathBuf {
        self.out_dir.join("match")
    }

    pub fn fit_dir(&self) -> PathBuf {
        self.out_dir.join("fit")
    }

    pub fn disparity_dir(&self) -> PathBuf {
        self.out_dir.join("disparity")
    }

    /// Stable content hash for provenance lines.
    pub fn content_hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        format!("{:016x}", quirt::rng::fnv1a64_str(&canonical))
    }
}
