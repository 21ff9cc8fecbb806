//! Reproducible experiment orchestration behind the CLI: a versioned TOML
//! config schema, admissibility validation, named experiments, CSV artifact
//! emission with checksums, and a manifest written last.
//!
//! Determinism contract: for a fixed `(config, seed)` the emitted CSV set is
//! byte-identical regardless of worker count, because all Monte Carlo
//! reductions fold per-sample results in sample order and all randomness is
//! counter-based.

mod runs;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::Verdict;
use crate::env::{
    BernoulliParams, CoeffMap, EnvironmentKind, EnvironmentSpec, LangevinSpec, Potential,
};
use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Heatkernel,
    Qmatrix,
    Rate,
    GreenCompare,
    LangevinCheck,
    IdentityCheck,
}

impl ExperimentName {
    pub fn all() -> &'static [ExperimentName] {
        use ExperimentName::*;
        &[
            Heatkernel,
            Qmatrix,
            Rate,
            GreenCompare,
            LangevinCheck,
            IdentityCheck,
        ]
    }

    pub fn describe(&self) -> &'static str {
        match self {
            ExperimentName::Heatkernel => {
                "constant-coefficient kernel suite: conservation, positivity, decay slope, envelope stability"
            }
            ExperimentName::Qmatrix => {
                "effective matrix via the corrector pipeline, with the direct symbol cross-check"
            }
            ExperimentName::Rate => "homogenization rate: sup error against the effective PDE per epsilon",
            ExperimentName::GreenCompare => {
                "averaged Green's function against homogenized references, envelope fits at orders 0/1/2"
            }
            ExperimentName::LangevinCheck => {
                "lattice field sampler against exact spectral covariance, with step-size bias control"
            }
            ExperimentName::IdentityCheck => {
                "contour-integral identity, kernel scaling identity, lattice-vs-continuum exponents"
            }
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentName::Heatkernel => "heatkernel",
            ExperimentName::Qmatrix => "qmatrix",
            ExperimentName::Rate => "rate",
            ExperimentName::GreenCompare => "green-compare",
            ExperimentName::LangevinCheck => "langevin-check",
            ExperimentName::IdentityCheck => "identity-check",
        };
        write!(f, "{s}")
    }
}

/// Environment section of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub kind: String,
    pub d: usize,
    pub kappa: f64,
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
    pub potential: String,
    pub curvature: f64,
    pub epsilon: f64,
    pub coeff_mid: f64,
    pub coeff_half: f64,
    pub dt: f64,
    pub t_burn: f64,
    pub grid_dt: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            kind: "constant".into(),
            d: 1,
            kappa: 0.125,
            gamma: 0.5,
            lo: 0.05,
            hi: 0.12,
            mass: 1.0,
            potential: "quadratic".into(),
            curvature: 1.0,
            epsilon: 0.5,
            coeff_mid: 0.08,
            coeff_half: 0.04,
            dt: 0.01,
            t_burn: 4.0,
            grid_dt: 0.05,
        }
    }
}

impl EnvConfig {
    pub fn langevin_spec(&self) -> Result<LangevinSpec> {
        let potential = match self.potential.as_str() {
            "quadratic" => Potential::Quadratic {
                curvature: self.curvature,
            },
            "perturbed" => Potential::Perturbed {
                epsilon: self.epsilon,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown potential '{other}' (quadratic | perturbed)"
                )))
            }
        };
        Ok(LangevinSpec {
            mass: self.mass,
            potential,
            coeff_map: CoeffMap::Tanh {
                mid: self.coeff_mid,
                half: self.coeff_half,
            },
            dt: self.dt,
            t_burn: self.t_burn,
            grid_dt: self.grid_dt,
        })
    }

    pub fn to_spec(&self, seed: u64) -> Result<EnvironmentSpec> {
        let kind = match self.kind.as_str() {
            "constant" => EnvironmentKind::Constant { kappa: self.kappa },
            "iid-bernoulli" => EnvironmentKind::IidBernoulli(BernoulliParams {
                gamma: self.gamma,
                kappa: self.kappa,
            }),
            "iid-uniform" => EnvironmentKind::IidUniformScalar {
                lo: self.lo,
                hi: self.hi,
            },
            "iid-diagonal" => EnvironmentKind::IidDiagonal {
                lo: self.lo,
                hi: self.hi,
            },
            "langevin" => EnvironmentKind::LangevinField(self.langevin_spec()?),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown environment kind '{other}' \
                     (constant | iid-bernoulli | iid-uniform | iid-diagonal | langevin)"
                )))
            }
        };
        EnvironmentSpec::new(self.d, kind, seed)
    }
}

/// Numerical knobs; every experiment reads the subset it needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    /// Diffusion scale for kernel-only experiments.
    pub lambda_big: f64,
    /// Discrete horizon (steps) or continuous horizon (time units).
    pub horizon: usize,
    pub samples: usize,
    /// Monte Carlo samples for the effective-matrix pipeline; 0 reuses
    /// `samples`.
    pub samples_corrector: usize,
    /// Spatial box side; 0 selects the sizing rule.
    pub side: usize,
    /// Corrector box side.
    pub corrector_side: usize,
    pub eta_ladder: Vec<u32>,
    pub eps_list: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub x_window: f64,
    pub profile_amplitude: f64,
    pub profile_width: f64,
    pub tol: f64,
    /// Number of small Fourier modes for the direct symbol estimate.
    pub modes: usize,
    /// Effective matrix override for experiments needing `a_hom`; 0 computes
    /// it from the corrector pipeline.
    pub a_hom: f64,
    /// Langevin check: number of field samples.
    pub field_samples: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        NumericsConfig {
            lambda_big: 0.125,
            horizon: 256,
            samples: 200,
            samples_corrector: 0,
            side: 0,
            corrector_side: 64,
            eta_ladder: vec![2, 3, 4],
            eps_list: vec![0.5, 0.25, 0.125],
            t_grid: vec![0.25, 0.5, 1.0],
            x_window: 4.0,
            profile_amplitude: 1.0,
            profile_width: 1.0,
            tol: 1e-9,
            modes: 3,
            a_hom: 0.0,
            field_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentName,
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub environment: EnvConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
}

fn default_out_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Schema and admissibility checks without running anything. Returns a list
/// of human-readable diagnostics; an empty list means the config is valid.
pub fn validate(config: &ExperimentConfig) -> Vec<String> {
    let mut diags = Vec::new();
    if config.version != CONFIG_VERSION {
        diags.push(format!(
            "config version {} unsupported (expected {CONFIG_VERSION})",
            config.version
        ));
    }
    let env = &config.environment;
    let num = &config.numerics;
    let spec = match env.to_spec(config.seed) {
        Ok(s) => Some(s),
        Err(e) => {
            diags.push(format!("environment: {e}"));
            None
        }
    };
    if let Some(spec) = &spec {
        if !spec.is_continuous_time() {
            if let Err(e) = spec.ellipticity.check_discrete_time() {
                diags.push(format!("stability: {e}"));
            }
        }
    }
    match config.experiment {
        ExperimentName::Heatkernel => {
            let prod = 4.0 * env.d as f64 * num.lambda_big;
            if prod > 1.0 {
                diags.push(format!(
                    "stability: 4*d*Lambda = {prod} > 1 for the discrete kernel"
                ));
            }
            if num.horizon < 16 {
                diags.push("horizon too short for a slope fit (need >= 16)".into());
            }
        }
        ExperimentName::Qmatrix => {
            if num.eta_ladder.len() < 2 {
                diags.push("eta ladder needs at least two rungs".into());
            }
            if num.eta_ladder.windows(2).any(|w| w[1] <= w[0]) {
                diags.push("eta ladder exponents must be strictly increasing".into());
            }
            if num.samples < 2 {
                diags.push("need at least 2 samples".into());
            }
        }
        ExperimentName::Rate => {
            if num.eps_list.is_empty() {
                diags.push("eps list is empty".into());
            }
            if num.eps_list.windows(2).any(|w| w[1] >= w[0]) {
                diags.push("eps list must be strictly decreasing".into());
            }
            for &eps in &num.eps_list {
                if !(eps > 0.0 && eps <= 1.0) {
                    diags.push(format!("eps = {eps} outside (0, 1]"));
                }
                for &t in &num.t_grid {
                    let ft = t / (eps * eps);
                    if (ft - ft.round()).abs() > 1e-9 {
                        diags.push(format!("t = {t} is not a multiple of eps^2 for eps = {eps}"));
                    }
                }
            }
            if env.d != 1 {
                diags.push("rate experiment supports d = 1".into());
            }
        }
        ExperimentName::GreenCompare => {
            if num.samples < 2 {
                diags.push("need at least 2 samples".into());
            }
            if num.horizon < 32 {
                diags.push("horizon too short for envelope fits (need >= 32)".into());
            }
        }
        ExperimentName::LangevinCheck => {
            if env.kind != "langevin" {
                diags.push("langevin-check requires environment kind 'langevin'".into());
            }
            if let Ok(ls) = env.langevin_spec() {
                if let Err(e) = ls.check_dt(env.d) {
                    diags.push(format!("langevin: {e}"));
                }
            }
            if num.field_samples < 100 {
                diags.push("field_samples too small for covariance checks".into());
            }
        }
        ExperimentName::IdentityCheck => {
            if num.lambda_big <= 0.0 || 4.0 * num.lambda_big > 1.0 {
                diags.push("identity check needs 0 < Lambda <= 1/4 in d = 1".into());
            }
        }
    }
    diags
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Artifact emission: write bytes, return the sha256 hex digest.
pub fn emit(content: &str, path: &Path) -> Result<String> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content.as_bytes())?;
    Ok(hex_digest(content.as_bytes()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

/// Run summary written last into the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub experiment: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_clock_secs: f64,
    pub verdict: String,
    pub config_sha256: String,
    pub summary: Vec<String>,
    pub files: Vec<ManifestFile>,
}

/// Outcome of one experiment run.
#[derive(Debug)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Pass => 0,
            Verdict::Inconclusive => 2,
            Verdict::Fail => 3,
        }
    }
}

/// Collector passed through experiment implementations: emitted files and
/// human-readable summary lines.
pub(crate) struct Artifacts {
    out_dir: PathBuf,
    files: Vec<ManifestFile>,
    pub summary: Vec<String>,
}

impl Artifacts {
    fn new(out_dir: &Path) -> Self {
        Artifacts {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn emit(&mut self, name: &str, content: &str) -> Result<()> {
        let digest = emit(content, &self.out_dir.join(name))?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            sha256: digest,
        });
        Ok(())
    }

    pub fn note(&mut self, line: String) {
        self.summary.push(line);
    }
}

/// Execute the named experiment end to end: artifacts plus manifest, with
/// all parallel work inside a dedicated pool of `workers` threads.
pub fn run(config: &ExperimentConfig, workers: usize) -> Result<RunOutcome> {
    let diags = validate(config);
    if !diags.is_empty() {
        return Err(Error::InvalidConfig(diags.join("; ")));
    }
    let out_dir = PathBuf::from(&config.out_dir);
    std::fs::create_dir_all(&out_dir)?;
    let start = Instant::now();
    let mut artifacts = Artifacts::new(&out_dir);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let verdict = pool.install(|| -> Result<Verdict> {
        match config.experiment {
            ExperimentName::Heatkernel => runs::heatkernel(config, &mut artifacts),
            ExperimentName::Qmatrix => runs::qmatrix(config, &mut artifacts),
            ExperimentName::Rate => runs::rate(config, &mut artifacts),
            ExperimentName::GreenCompare => runs::green_compare(config, &mut artifacts),
            ExperimentName::LangevinCheck => runs::langevin_check(config, &mut artifacts),
            ExperimentName::IdentityCheck => runs::identity_check(config, &mut artifacts),
        }
    })?;

    let config_text = config.to_toml();
    let config_sha = hex_digest(config_text.as_bytes());
    artifacts.emit("config.echo.toml", &config_text)?;

    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: config.experiment.to_string(),
        seed: config.seed,
        workers,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        verdict: verdict.to_string(),
        config_sha256: config_sha,
        summary: artifacts.summary.clone(),
        files: artifacts.files.clone(),
    };
    let manifest_text =
        toml::to_string_pretty(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.toml"), manifest_text)?;

    Ok(RunOutcome {
        verdict,
        manifest,
        out_dir,
    })
}

/// Worker count from the environment variable, falling back to the number
/// of available CPUs.
pub fn workers_from_env() -> usize {
    std::env::var("PARAHOM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config(experiment: ExperimentName) -> ExperimentConfig {
        ExperimentConfig {
            version: 1,
            experiment,
            seed: 7,
            out_dir: "out".into(),
            environment: EnvConfig::default(),
            numerics: NumericsConfig::default(),
        }
    }

    #[test]
    fn valid_config_has_no_diagnostics() {
        let cfg = base_config(ExperimentName::Heatkernel);
        assert!(validate(&cfg).is_empty(), "{:?}", validate(&cfg));
    }

    #[test]
    fn stability_violation_is_diagnosed() {
        let mut cfg = base_config(ExperimentName::Heatkernel);
        cfg.numerics.lambda_big = 0.3; // 4 d Lambda = 1.2
        let diags = validate(&cfg);
        assert!(diags.iter().any(|d| d.contains("stability")), "{diags:?}");
    }

    #[test]
    fn empty_eps_list_is_diagnosed() {
        let mut cfg = base_config(ExperimentName::Rate);
        cfg.numerics.eps_list.clear();
        let diags = validate(&cfg);
        assert!(diags.iter().any(|d| d.contains("eps list")), "{diags:?}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = base_config(ExperimentName::Qmatrix);
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back.experiment, ExperimentName::Qmatrix);
        assert_eq!(back.seed, 7);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"
version = 1
experiment = "heatkernel"
seed = 1
nonsense = true
"#;
        assert!(ExperimentConfig::from_toml(text).is_err());
    }

    #[test]
    fn emit_is_deterministic() {
        let dir = std::env::temp_dir().join("parahom-emit-test");
        let p1 = dir.join("a.csv");
        let c1 = emit("x,y\n1,2\n", &p1).unwrap();
        let c2 = emit("x,y\n1,2\n", &p1).unwrap();
        assert_eq!(c1, c2);
        let c3 = emit("x,y\n1,3\n", &p1).unwrap();
        assert_ne!(c1, c3);
        std::fs::remove_dir_all(&dir).ok();
    }
}
