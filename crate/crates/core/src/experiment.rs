//! Config-driven experiments: dataset generation, pipeline runs, ablations
//! and reports.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! data/calibration.json     rig, ERP grid and bin schedule used to render
//! data/scenes.json          scene descriptions
//! data/manifest.json        sample list
//! data/<scene>/cam<i>.pgm   fisheye views (corrupted when enabled)
//! data/<scene>/gt.pfm       inverse-depth index at 2× ERP resolution,
//!                           NaN outside textured surfaces
//! run/<scene>.pfm           upsampled prediction
//! run/metrics.csv           one row per sample plus `summary`
//! ablation.csv              one summary row per variant
//! report.csv                run summary followed by the ablation rows
//! ```

use crate::corrupt::{corrupt_with_log, CorruptionSpec};
use crate::depth::RefineConfig;
use crate::error::{Error, Result};
use crate::image::{read_pfm, read_pgm, write_pfm, write_pgm, Map2};
use crate::metrics::{compare_report, index_error_metrics, parse_report, pool, Metrics, CSV_HEADER};
use crate::pipeline::{correlate_views, estimate_from_consistency, render_views, textured_mask, with_fov_mask, Descriptor};
use crate::rig::Calibration;
use crate::rng::{derive_seed, tag};
use crate::scene::{canned_suite, gt_erp_inverse_depth, Scene};
use crate::vct::{vct_forward, Fusion, Mode, VctConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteSpec {
    /// The procedural 12-scene suite, seeded by the global seed.
    Canned,
    /// JSON array of scenes.
    File(PathBuf),
}

/// Overrides for the ERP grid and bin schedule of the rig file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub erp_width: usize,
    pub erp_height: usize,
    pub num_bins: usize,
    pub d_min: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    #[default]
    Vct,
    PlainMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VctSettings {
    pub temperature: f64,
    pub k: usize,
    pub mode: Mode,
}

impl Default for VctSettings {
    fn default() -> Self {
        let d = VctConfig::<f64>::default();
        Self {
            temperature: d.temperature,
            k: d.k,
            mode: d.mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionToggle {
    pub enabled: bool,
    pub noise_amplitude: f64,
}

impl Default for CorruptionToggle {
    fn default() -> Self {
        Self {
            enabled: false,
            noise_amplitude: CorruptionSpec::default().noise_amplitude(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Calibration JSON; the built-in square rig when absent.
    pub rig: Option<PathBuf>,
    pub suite: SuiteSpec,
    pub grid: Option<GridSpec>,
    pub descriptor: Descriptor,
    pub fusion: FusionKind,
    pub vct: VctSettings,
    pub refine: RefineConfig<f64>,
    pub corruption: CorruptionToggle,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rig: None,
            suite: SuiteSpec::Canned,
            grid: None,
            descriptor: Descriptor::default(),
            fusion: FusionKind::default(),
            vct: VctSettings::default(),
            refine: RefineConfig::default(),
            corruption: CorruptionToggle::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config; relative paths inside resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir().join("data")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir().join("run")
    }

    pub fn calibration(&self) -> Result<Calibration> {
        let mut cal = match &self.rig {
            Some(p) => Calibration::load(&self.resolve(p))?,
            None => Calibration::default(),
        };
        if let Some(g) = self.grid {
            cal.erp_width = g.erp_width;
            cal.erp_height = g.erp_height;
            cal.num_bins = g.num_bins;
            cal.d_min = g.d_min;
            cal.d_max = g.d_max;
        }
        cal.grid()?;
        cal.sampling::<f64>()?;
        Ok(cal)
    }

    pub fn scenes(&self) -> Result<Vec<Scene>> {
        match &self.suite {
            SuiteSpec::Canned => Ok(canned_suite(self.seed)),
            SuiteSpec::File(p) => {
                let p = self.resolve(p);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let scenes: Vec<Scene> = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
                if scenes.is_empty() {
                    return Err(Error::format(&p, "scene file lists no scenes"));
                }
                Ok(scenes)
            }
        }
    }

    pub fn corruption_spec(&self) -> Result<Option<CorruptionSpec>> {
        self.corruption
            .enabled
            .then(|| CorruptionSpec::with_noise_amplitude(self.corruption.noise_amplitude))
            .transpose()
    }

    /// Fusion rule for `num_pairs` view pairs; the Gumbel seed derives from
    /// the global seed.
    pub fn fusion(&self) -> Fusion<f64> {
        match self.fusion {
            FusionKind::PlainMean => Fusion::PlainMean,
            FusionKind::Vct => Fusion::Vct(VctConfig {
                temperature: self.vct.temperature,
                k: self.vct.k,
                mode: self.vct.mode,
                gumbel_seed: derive_seed(&[self.seed, tag("gumbel")]),
            }),
        }
    }

    /// Checks every parameter against the module invariants.
    pub fn validate(&self) -> Result<()> {
        let cal = self.calibration()?;
        let pairs = cal.cameras.len() * (cal.cameras.len() - 1) / 2;
        if let Fusion::Vct(v) = self.fusion() {
            v.validate(pairs)?;
        }
        self.refine.validate(cal.num_bins)?;
        self.corruption_spec()?;
        if let SuiteSpec::File(p) = &self.suite {
            let p = self.resolve(p);
            if !p.is_file() {
                return Err(Error::Config(format!("scene file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub index: usize,
    pub name: String,
    /// Image paths relative to the dataset directory, one per camera.
    pub images: Vec<String>,
    pub ground_truth: String,
    /// Cameras that received at least one occlusion.
    pub corrupted_cameras: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub corrupted: bool,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    pub fn load(dataset: &Path) -> Result<Self> {
        let p = dataset.join("manifest.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

/// Renders every scene through the rig and writes images, ground truth and
/// the manifest.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let cal = cfg.calibration()?;
    let rig = cal.rig::<f64>()?;
    let grid = cal.grid()?;
    let fine = grid.doubled();
    let sampling = cal.sampling::<f64>()?;
    let scenes = cfg.scenes()?;
    let spec = cfg.corruption_spec()?;
    let dir = cfg.dataset_dir();
    create_dir(&dir)?;
    cal.save(&dir.join("calibration.json"))?;
    write_text(
        &dir.join("scenes.json"),
        &serde_json::to_string_pretty(&scenes).expect("scenes serialize"),
    )?;
    let samples = scenes
        .par_iter()
        .enumerate()
        .map(|(index, scene)| -> Result<SampleEntry> {
            let sub = dir.join(&scene.name);
            create_dir(&sub)?;
            let mut images = Vec::with_capacity(rig.len());
            let mut corrupted_cameras = Vec::new();
            for (cam, img) in render_views::<f64>(scene, &rig).into_iter().enumerate() {
                let img = match &spec {
                    Some(s) => {
                        let (out, log) = corrupt_with_log(&img, index as u64, cam as u64, s)?;
                        if !log.is_empty() {
                            corrupted_cameras.push(cam);
                        }
                        out
                    }
                    None => img,
                };
                let name = format!("{}/cam{cam}.pgm", scene.name);
                write_pgm(&dir.join(&name), &img)?;
                images.push(name);
            }
            let mut gt = gt_erp_inverse_depth::<f64>(scene, &fine, &sampling);
            for (ok, tex) in gt.valid.iter_mut().zip(textured_mask(scene, &fine, &sampling)) {
                *ok &= tex;
            }
            let ground_truth = format!("{}/gt.pfm", scene.name);
            write_pfm(&dir.join(&ground_truth), &gt)?;
            Ok(SampleEntry {
                index,
                name: scene.name.clone(),
                images,
                ground_truth,
                corrupted_cameras,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        corrupted: spec.is_some(),
        samples,
    };
    write_text(
        &dir.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

/// One labeled pipeline configuration evaluated over the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub fusion: Fusion<f64>,
    pub refine: RefineConfig<f64>,
}

/// Final predictions and metrics of every variant for one sample.
struct SampleResult {
    preds: Vec<Map2<f64>>,
    metrics: Vec<Metrics<f64>>,
}

/// Runs every variant on every manifest sample. The correlation tensor is
/// built once per sample and shared by the variants.
fn evaluate(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<(Manifest, Vec<SampleResult>)> {
    let dir = cfg.dataset_dir();
    let manifest = Manifest::load(&dir)?;
    let cal = Calibration::load(&dir.join("calibration.json"))?;
    let rig = cal.rig::<f64>()?;
    let grid = cal.grid()?;
    let sampling = cal.sampling::<f64>()?;
    for v in variants {
        v.refine.validate(sampling.num_bins)?;
    }
    let results = manifest
        .samples
        .par_iter()
        .map(|s| -> Result<SampleResult> {
            if s.images.len() != rig.len() {
                return Err(Error::Config(format!(
                    "sample {} has {} images for {} cameras",
                    s.name,
                    s.images.len(),
                    rig.len()
                )));
            }
            let images = s
                .images
                .iter()
                .zip(&rig.cameras)
                .map(|(p, cam)| with_fov_mask(read_pgm(&dir.join(p))?, &cam.intrinsics))
                .collect::<Result<Vec<_>>>()?;
            let gt = read_pfm::<f64>(&dir.join(&s.ground_truth))?;
            let tensor = correlate_views(&images, &rig, &grid, &sampling, cfg.descriptor)?;
            let mut out = SampleResult {
                preds: Vec::new(),
                metrics: Vec::new(),
            };
            for v in variants {
                let est = estimate_from_consistency(vct_forward(&tensor, &v.fusion)?, &v.refine)?;
                let pred = est.upsampled;
                if !pred.same_shape(&gt) {
                    return Err(Error::Config(format!(
                        "ground truth of {} is {}×{}, prediction is {}×{}",
                        s.name, gt.width, gt.height, pred.width, pred.height
                    )));
                }
                let mask: Vec<bool> = gt.valid.iter().zip(&pred.valid).map(|(a, b)| *a && *b).collect();
                out.metrics.push(index_error_metrics(&pred, &gt, &mask)?);
                out.preds.push(pred);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, results))
}

/// Variant described by the config itself.
pub fn configured_variant(cfg: &ExperimentConfig) -> Variant {
    Variant {
        label: "configured".into(),
        fusion: cfg.fusion(),
        refine: cfg.refine,
    }
}

/// Per-sample rows and the pooled summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<(String, Metrics<f64>)>,
    pub summary: Metrics<f64>,
}

/// Predicts every sample, writes the upsampled maps and `metrics.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let (manifest, results) = evaluate(cfg, &[configured_variant(cfg)])?;
    let run = cfg.run_dir();
    create_dir(&run)?;
    let mut rows = Vec::with_capacity(results.len());
    for (s, r) in manifest.samples.iter().zip(&results) {
        write_pfm(&run.join(format!("{}.pfm", s.name)), &r.preds[0])?;
        rows.push((s.name.clone(), r.metrics[0]));
    }
    let summary = pool(&rows.iter().map(|(_, m)| *m).collect::<Vec<_>>())?;
    let mut table = rows.clone();
    table.push(("summary".into(), summary));
    write_text(&run.join("metrics.csv"), &compare_report(&table))?;
    Ok(RunReport { rows, summary })
}

/// The fixed ablation set, derived from the configured temperature, mode and
/// refinement.
pub fn ablation_variants(cfg: &ExperimentConfig, num_pairs: usize) -> Vec<Variant> {
    let vct = |k: usize| {
        Fusion::Vct(VctConfig {
            temperature: cfg.vct.temperature,
            k,
            mode: cfg.vct.mode,
            gumbel_seed: derive_seed(&[cfg.seed, tag("gumbel")]),
        })
    };
    let smooth = RefineConfig {
        smoothing: true,
        ..cfg.refine
    };
    let mut out: Vec<Variant> = [1, 2, 3]
        .into_iter()
        .map(|k| Variant {
            label: format!("k{k}"),
            fusion: vct(k.min(num_pairs)),
            refine: smooth,
        })
        .collect();
    out.push(Variant {
        label: "no-topk".into(),
        fusion: vct(num_pairs),
        refine: smooth,
    });
    out.push(Variant {
        label: "no-vct".into(),
        fusion: Fusion::PlainMean,
        refine: smooth,
    });
    out.push(Variant {
        label: "no-smoothing".into(),
        fusion: vct(cfg.vct.k.min(num_pairs)),
        refine: RefineConfig {
            smoothing: false,
            ..cfg.refine
        },
    });
    out
}

/// Pooled summary per ablation variant, written to `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Vec<(String, Metrics<f64>)>> {
    cfg.validate()?;
    let cal = Calibration::load(&cfg.dataset_dir().join("calibration.json"))?;
    let n = cal.cameras.len();
    let variants = ablation_variants(cfg, n * (n - 1) / 2);
    let (_, results) = evaluate(cfg, &variants)?;
    let rows = variants
        .iter()
        .enumerate()
        .map(|(i, v)| Ok((v.label.clone(), pool(&results.iter().map(|r| r.metrics[i]).collect::<Vec<_>>())?)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.output_dir())?;
    write_text(&cfg.output_dir().join("ablation.csv"), &compare_report(&rows))?;
    Ok(rows)
}

/// Collates the run summary and ablation rows into `report.csv` and returns
/// its text.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let run = cfg.run_dir().join("metrics.csv");
    let ablation = cfg.output_dir().join("ablation.csv");
    let read = |p: &Path| -> Result<Option<String>> {
        match std::fs::read_to_string(p) {
            Ok(t) => {
                parse_report(&t).map_err(|e| Error::format(p, e.to_string()))?;
                Ok(Some(t))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(p, e)),
        }
    };
    let (run_text, abl_text) = (read(&run)?, read(&ablation)?);
    if run_text.is_none() && abl_text.is_none() {
        return Err(Error::Config(format!(
            "nothing to report: neither {} nor {} exists",
            run.display(),
            ablation.display()
        )));
    }
    let mut out = format!("{CSV_HEADER}\n");
    if let Some(t) = run_text {
        if let Some(line) = t.lines().find(|l| l.starts_with("summary,")) {
            let _ = writeln!(out, "run{}", &line["summary".len()..]);
        }
    }
    if let Some(t) = abl_text {
        for line in t.lines().skip(1).filter(|l| !l.is_empty()) {
            let _ = writeln!(out, "{line}");
        }
    }
    write_text(&cfg.output_dir().join("report.csv"), &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let cfg = ExperimentConfig::default();
        cfg.save(&p).unwrap();
        let back = ExperimentConfig::load(&p).unwrap();
        assert_eq!(back.base_dir, dir.path());
        assert_eq!(ExperimentConfig { base_dir: cfg.base_dir.clone(), ..back }, cfg);
    }

    #[test]
    fn partial_config_fills_defaults_and_rejects_unknown_fields() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "vct": {"k": 2}}"#).unwrap();
        assert_eq!((cfg.seed, cfg.vct.k, cfg.vct.temperature), (7, 2, 1.0));
        assert_eq!(cfg.refine, RefineConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 7}"#).is_err());
        let f: ExperimentConfig = serde_json::from_str(r#"{"suite": {"file": "s.json"}, "fusion": "plain_mean"}"#).unwrap();
        assert_eq!(f.suite, SuiteSpec::File("s.json".into()));
        assert_eq!(f.fusion(), Fusion::PlainMean);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.vct.k = 7;
        assert!(cfg.validate().is_err());
        cfg.vct.k = 3;
        cfg.refine.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg.refine.iterations = 8;
        cfg.suite = SuiteSpec::File("/nonexistent/scenes.json".into());
        assert!(cfg.validate().is_err());
        cfg.suite = SuiteSpec::Canned;
        cfg.corruption = CorruptionToggle {
            enabled: true,
            noise_amplitude: 0.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = ExperimentConfig {
            base_dir: PathBuf::from("/a/b"),
            output_dir: PathBuf::from("out"),
            ..Default::default()
        };
        assert_eq!(cfg.output_dir(), PathBuf::from("/a/b/out"));
        assert_eq!(cfg.resolve(Path::new("/abs")), PathBuf::from("/abs"));
    }

    #[test]
    fn ablation_set_has_six_labeled_rows() {
        let v = ablation_variants(&ExperimentConfig::default(), 6);
        let labels: Vec<&str> = v.iter().map(|x| x.label.as_str()).collect();
        assert_eq!(labels, ["k1", "k2", "k3", "no-topk", "no-vct", "no-smoothing"]);
        assert!(matches!(v[3].fusion, Fusion::Vct(c) if c.k == 6));
        assert_eq!(v[4].fusion, Fusion::PlainMean);
        assert!(!v[5].refine.smoothing && v[0].refine.smoothing);
    }

    #[test]
    fn gumbel_seed_fans_out_from_global_seed() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..Default::default() };
        let seed = |c: &ExperimentConfig| match c.fusion() {
            Fusion::Vct(v) => v.gumbel_seed,
            Fusion::PlainMean => unreachable!(),
        };
        assert_ne!(seed(&a), seed(&b));
        assert_eq!(seed(&a), derive_seed(&[0, tag("gumbel")]));
    }
}
