//! The four subcommands. Each `run_*` function computes in memory; each
//! `cmd_*` function adds file output under `--out`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nfisac_core::codebook::{default_min_range, Codebook};
use nfisac_core::detection::{detect_map, estimate_parameters, Detection, Hit};
use nfisac_core::evaluation::{
    average_rate_curve, complexity_report, sinr_loss_curve, transverse_resolution, write_transverse_csv,
    ComplexityReport, RateConfig, RateCurve, SinrConfig, SinrCurve,
};
use nfisac_core::geometry::{ebrd, rayleigh_distance, ArrayGeometry, PolarPoint};
use nfisac_core::heatmap::write_ppm;
use nfisac_core::scene::{write_cube, SnapshotSource, DEFAULT_CUBE_CAP};
use nfisac_core::spread::AngularSpreadTable;
use nfisac_core::stap::{doppler_grid, reduced_scan, window_bins, DetectionMap};
use nfisac_core::training::{train_user, TrainingReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{self, CacheStatus, TableKey};
use crate::{CliError, ScenarioConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Dynamic range of the heatmaps.
const HEATMAP_RANGE_DB: f64 = 50.0;
/// Pixels per map cell in the heatmaps.
const HEATMAP_CELL: usize = 4;

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub noiseless: bool,
}

impl Options {
    /// The configuration with the `--seed` override applied. Without
    /// `--config` the built-in case study is used.
    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub noiseless: bool,
}

impl Provenance {
    pub fn new(command: &str, cfg: &ScenarioConfig, noiseless: bool) -> Self {
        Self {
            tool: "nfisac".into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256: cfg.sha256(),
            seed: cfg.seed,
            noiseless,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} {} config_sha256={} seed={} noiseless={}",
            self.tool, self.version, self.command, self.config_sha256, self.seed, self.noiseless
        )
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Numerical(format!("cannot create {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Numerical(format!("cannot create {}: {e}", dir.display())))
}

/// CSV with a leading `# provenance` comment line.
fn write_csv_file<F>(dir: &Path, name: &str, prov: &Provenance, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> nfisac_core::Result<()>,
{
    let mut w = create(dir, name)?;
    writeln!(w, "# {}", prov.line())?;
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json_file<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Numerical(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ProvenanceFile<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    config: &'a ScenarioConfig,
}

fn write_provenance(dir: &Path, prov: &Provenance, cfg: &ScenarioConfig) -> Result<(), CliError> {
    write_json_file(dir, "provenance.json", &ProvenanceFile { provenance: prov, config: cfg })
}

/// DFT codebook and spread table for the configured array, through the
/// cache.
pub fn tables(cfg: &ScenarioConfig, cache_dir: &Path) -> Result<(Codebook, AngularSpreadTable, CacheStatus), CliError> {
    let key = TableKey::for_geometry(cfg.geometry()?, cfg.user.spread_threshold_db);
    cache::load_or_build(&key, cache_dir)
}

/// Beam training of the configured user. The sweep noise uses its own
/// stream of the scenario seed.
pub fn run_training(
    cfg: &ScenarioConfig,
    dft: &Codebook,
    table: &AngularSpreadTable,
    noiseless: bool,
) -> Result<TrainingReport, CliError> {
    let user = cfg.user_position()?;
    let refine = cfg.refine_config(table.min_range());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let snr = (!noiseless).then_some(cfg.user.sweep_snr_db);
    Ok(train_user(dft, table, &user, &refine, snr, &mut rng)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserTruth {
    pub range_m: f64,
    pub angle_deg: f64,
}

/// On-disk training report: the estimates plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingFile {
    pub provenance: Provenance,
    pub user: UserTruth,
    pub report: TrainingReport,
}

impl TrainingFile {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read training report {}: {e}", path.display())))?;
        let file: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("training report {}: {e}", path.display())))?;
        // Re-run the report's own consistency checks.
        TrainingReport::from_json(&file.report.to_json()?)?;
        Ok(file)
    }
}

pub fn cmd_train(opts: &Options, cache_dir: &Path) -> Result<TrainingFile, CliError> {
    let cfg = opts.scenario()?;
    let (dft, table, status) = tables(&cfg, cache_dir)?;
    eprintln!(
        "spread table: {} grid points ({})",
        table.len(),
        if status == CacheStatus::Hit { "cached" } else { "built" }
    );
    let report = run_training(&cfg, &dft, &table, opts.noiseless)?;
    let user = cfg.user_position()?;
    let prov = Provenance::new("train", &cfg, opts.noiseless);
    let file = TrainingFile {
        provenance: prov.clone(),
        user: UserTruth { range_m: user.range(), angle_deg: user.angle_deg() },
        report,
    };
    prepare_out(&opts.out)?;
    write_json_file(&opts.out, "training_report.json", &file)?;
    let mut w = create(&opts.out, "dft_codebook.json")?;
    w.write_all(dft.to_json()?.as_bytes())?;
    w.flush()?;
    let mut w = create(&opts.out, "spread_table.json")?;
    w.write_all(table.to_json()?.as_bytes())?;
    w.flush()?;
    write_provenance(&opts.out, &prov, &cfg)?;
    eprintln!(
        "coarse ({:.3} m, {:.3} deg) refined ({:.3} m, {:.3} deg) after {} + {} beams",
        file.report.coarse.range(),
        file.report.coarse.angle_deg(),
        file.report.refined.range(),
        file.report.refined.angle_deg(),
        file.report.beams_swept,
        file.report.refinement_beams
    );
    Ok(file)
}

#[derive(Debug, Clone)]
pub struct SenseOutcome {
    pub map: DetectionMap,
    pub hits: Vec<Hit>,
    pub detections: Vec<Detection>,
    pub complexity: ComplexityReport,
}

/// Range bins the reduced scan covers for `report`, and whether any
/// configured target falls inside them (vacuously true without targets).
pub fn coverage(cfg: &ScenarioConfig, report: &TrainingReport) -> Result<(Vec<usize>, bool), CliError> {
    let params = cfg.waveform()?;
    let bins = window_bins(&params, report.refined.range(), report.candidate_ranges.len())?;
    let targets = cfg.targets()?;
    let covered = targets.is_empty()
        || targets.iter().any(|t| {
            nfisac_core::scene::range_bin_of(&params, t.position.range()).is_ok_and(|b| bins.contains(&b))
        });
    Ok((bins, covered))
}

pub fn run_sensing(cfg: &ScenarioConfig, report: &TrainingReport, noiseless: bool) -> Result<SenseOutcome, CliError> {
    let (bins, covered) = coverage(cfg, report)?;
    if !covered {
        return Err(CliError::Coverage(format!(
            "the candidate window (range bins {}..={}) contains none of the {} targets",
            bins[0],
            bins[bins.len() - 1],
            cfg.targets.len()
        )));
    }
    let scene = cfg.scene(noiseless)?;
    let geom = *scene.geometry();
    let dopplers = doppler_grid(scene.params().n_pulses);
    let (map, complexity) = reduced_scan(&scene, &geom, report, &dopplers, &cfg.scan_config())?;
    let hits = detect_map(&map, &cfg.cfar()?)?;
    let detections = estimate_parameters(&map, &hits);
    Ok(SenseOutcome { map, hits, detections, complexity })
}

#[derive(Serialize)]
struct DetectionsFile<'a> {
    provenance: &'a Provenance,
    range_bins: &'a [usize],
    detections: &'a [Detection],
}

pub fn cmd_sense(opts: &Options, training_report: Option<&Path>) -> Result<SenseOutcome, CliError> {
    let cfg = opts.scenario()?;
    let default_report = opts.out.join("training_report.json");
    let training = TrainingFile::read(training_report.unwrap_or(&default_report))?;
    let outcome = run_sensing(&cfg, &training.report, opts.noiseless)?;
    let prov = Provenance::new("sense", &cfg, opts.noiseless);
    prepare_out(&opts.out)?;
    write_csv_file(&opts.out, "detection_map.csv", &prov, |w| outcome.map.write_csv(w))?;
    write_csv_file(&opts.out, "complexity.csv", &prov, |w| outcome.complexity.write_csv(w))?;
    for (name, image, axes) in [
        ("range_doppler.ppm", outcome.map.range_doppler(), "rows: range bins, columns: Doppler bins"),
        ("angle_doppler.ppm", outcome.map.angle_doppler(), "rows: candidate angles, columns: Doppler bins"),
    ] {
        let mut w = create(&opts.out, name)?;
        let comment = [prov.line(), axes.to_string(), format!("{HEATMAP_RANGE_DB} dB below peak to peak")];
        write_ppm(image.as_ref(), HEATMAP_RANGE_DB, HEATMAP_CELL, &comment, &mut w)?;
        w.flush()?;
    }
    write_json_file(
        &opts.out,
        "detections.json",
        &DetectionsFile { provenance: &prov, range_bins: &outcome.map.range_bins, detections: &outcome.detections },
    )?;
    write_provenance(&opts.out, &prov, &cfg)?;
    eprintln!("{} CFAR hits, {} detections", outcome.hits.len(), outcome.detections.len());
    for d in &outcome.detections {
        eprintln!(
            "  range {:.3} m  velocity {:+.3} m/s  angle {:.3} deg  {:.1} dB",
            d.range_m, d.velocity_mps, d.angle_deg, d.statistic_db
        );
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Sinr,
    Rate,
    Transverse,
    Complexity,
}

impl Panel {
    pub const ALL: [Panel; 4] = [Panel::Sinr, Panel::Rate, Panel::Transverse, Panel::Complexity];

    pub fn name(self) -> &'static str {
        match self {
            Panel::Sinr => "sinr",
            Panel::Rate => "rate",
            Panel::Transverse => "transverse",
            Panel::Complexity => "complexity",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            CliError::Config(format!("unknown panel {name:?} (expected sinr, rate, transverse or complexity)"))
        })
    }
}

/// `count` points from `lo` to `hi`, evenly spaced in log distance.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect()
}

fn sinr_velocities(cfg: &ScenarioConfig) -> Vec<f64> {
    let s = &cfg.evaluation.sinr;
    let steps = ((s.velocity_max_mps - s.velocity_min_mps) / s.velocity_step_mps + 1e-9).floor() as usize;
    (0..=steps).map(|i| s.velocity_min_mps + i as f64 * s.velocity_step_mps).collect()
}

/// SINR panel at the first target's position (the user's without targets).
pub fn run_sinr(cfg: &ScenarioConfig, k_cells: Option<usize>) -> Result<SinrCurve, CliError> {
    let s = &cfg.evaluation.sinr;
    let params = cfg.waveform()?;
    let clutter = cfg
        .clutter_model()
        .ok_or_else(|| CliError::Config("the sinr panel needs a clutter model".into()))?;
    let target = match cfg.targets()?.first() {
        Some(t) => t.position,
        None => cfg.user_position()?,
    };
    let sinr = SinrConfig {
        target,
        velocities: sinr_velocities(cfg),
        n_c: s.n_c,
        k_cells: k_cells.or(s.k_cells).unwrap_or(4 * params.n_pulses * s.n_c),
        clutter,
        noise_power: cfg.noise_power(),
        target_snr_db: s.target_snr_db,
        loading: cfg.scan_config().loading,
        seeds: s.seeds.clone(),
    };
    Ok(sinr_loss_curve(&cfg.geometry()?, &params, &sinr)?)
}

pub fn rate_config(cfg: &ScenarioConfig, geom: &ArrayGeometry) -> RateConfig {
    let r = &cfg.evaluation.rate;
    RateConfig {
        angle: r.angle_deg.to_radians(),
        l_c: r.l_c,
        n_c: r.n_c,
        min_range: default_min_range(geom),
        snr_ref_db: r.snr_ref_db,
        frame_budget: r.frame_budget,
    }
}

/// Rate panel over log-spaced distances from twice the aperture to the
/// Rayleigh distance. Returns the curve and the EBRD of the test angle.
pub fn run_rate(cfg: &ScenarioConfig, table: &AngularSpreadTable) -> Result<(RateCurve, f64), CliError> {
    let geom = cfg.geometry()?;
    let rc = rate_config(cfg, &geom);
    let lo = default_min_range(&geom);
    let e = ebrd(&geom, rc.angle)?;
    let distances = log_spaced(lo, rayleigh_distance(&geom), cfg.evaluation.rate.points);
    let curve = average_rate_curve(&geom, table, &distances, &rc, 0.5 * (lo + e))?;
    Ok((curve, e))
}

/// Transverse-velocity resolution over log-spaced distances from twice the
/// aperture to the EBRD, plus one point past the Rayleigh distance.
pub fn run_transverse(cfg: &ScenarioConfig) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let geom = cfg.geometry()?;
    let t = &cfg.evaluation.transverse;
    let angle = t.angle_deg.to_radians();
    let lo = default_min_range(&geom);
    let mut distances = log_spaced(lo, ebrd(&geom, angle)?, t.points);
    distances.push(1.5 * rayleigh_distance(&geom));
    let resolution = transverse_resolution(&geom, &cfg.waveform()?, angle, &distances)?;
    Ok((distances, resolution))
}

pub fn run_complexity(cfg: &ScenarioConfig) -> Result<ComplexityReport, CliError> {
    let params = cfg.waveform()?;
    Ok(complexity_report(
        params.n_range_bins(),
        params.n_pulses,
        cfg.geometry.n_elements,
        cfg.candidates.l_c,
        cfg.candidates.n_c,
    )?)
}

/// Slack of the SINR ordering check, dB.
pub const SINR_ORDER_SLACK_DB: f64 = 0.1;

pub fn cmd_evaluate(opts: &Options, panel: Panel, cache_dir: &Path) -> Result<PathBuf, CliError> {
    let cfg = opts.scenario()?;
    let prov = Provenance::new(&format!("evaluate --panel {}", panel.name()), &cfg, opts.noiseless);
    prepare_out(&opts.out)?;
    let name = format!("{}.csv", panel.name());
    match panel {
        Panel::Sinr => {
            let curve = run_sinr(&cfg, None)?;
            write_csv_file(&opts.out, &name, &prov, |w| curve.write_csv(w))?;
            let violation = curve.ordering_violation();
            if violation > SINR_ORDER_SLACK_DB {
                eprintln!("warning: SINR ordering optimal >= nf-stap >= conventional violated by {violation:.3} dB");
            }
            let five = curve.nearest(5.0);
            eprintln!(
                "at {:.2} m/s: optimal {:.2} dB, nf-stap {:.2} dB, conventional {:.2} dB; mean adaptive loss {:.3} dB",
                curve.velocities[five],
                curve.optimal_db[five],
                curve.nf_stap_db[five],
                curve.conventional_db[five],
                curve.mean_adaptive_loss()
            );
        }
        Panel::Rate => {
            let (_, table, _) = tables(&cfg, cache_dir)?;
            let (curve, e) = run_rate(&cfg, &table)?;
            write_csv_file(&opts.out, &name, &prov, |w| curve.write_csv(w))?;
            eprintln!("EBRD {e:.3} m; ordering violation up to EBRD {:.4} bps/Hz", curve.ordering_violation(e));
        }
        Panel::Transverse => {
            let (d, res) = run_transverse(&cfg)?;
            write_csv_file(&opts.out, &name, &prov, |w| write_transverse_csv(&d, &res, w))?;
        }
        Panel::Complexity => {
            let c = run_complexity(&cfg)?;
            write_csv_file(&opts.out, &name, &prov, |w| c.write_csv(w))?;
            eprintln!("reduction factor {}", c.reduction_factor);
        }
    }
    write_provenance(&opts.out, &prov, &cfg)?;
    Ok(opts.out.join(name))
}

/// Streams the synthesized cube to `cube.bin`; cubes above the default
/// entry cap are refused.
pub fn cmd_cube_dump(opts: &Options) -> Result<PathBuf, CliError> {
    let cfg = opts.scenario()?;
    let scene = cfg.scene(opts.noiseless)?;
    let entries = scene.n_range_bins() as u128 * scene.params().n_pulses as u128 * scene.n_elements() as u128;
    if entries > DEFAULT_CUBE_CAP {
        return Err(nfisac_core::Error::CubeTooLarge { entries, cap: DEFAULT_CUBE_CAP }.into());
    }
    let prov = Provenance::new("cube-dump", &cfg, opts.noiseless);
    prepare_out(&opts.out)?;
    let mut w = create(&opts.out, "cube.bin")?;
    write_cube(&scene, &mut w)?;
    w.flush()?;
    write_provenance(&opts.out, &prov, &cfg)?;
    Ok(opts.out.join("cube.bin"))
}

/// The training user as a polar point, for reports.
pub fn user_point(file: &TrainingFile) -> Result<PolarPoint, CliError> {
    Ok(PolarPoint::from_degrees(file.user.range_m, file.user.angle_deg)?)
}
