use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use epimix_core::combine::{combine_areas, unique_efficiency, CombineConfig, JointPosterior};
use epimix_core::evaluation::{
    anc_prediction, cross_area_correlation, mae_clinic_prevalence, split, MaeGranularity, Quantity, Scenario, Segment,
    SplitSpec,
};
use epimix_core::hyperfit::estimate_hyperparameters;
use epimix_core::imis::{ImisConfig, WeightedSamples};
use epimix_core::io;
use epimix_core::likelihood::{AncDataset, SurveyObservation};
use epimix_core::model::project_epidemic;
use epimix_core::params::Theta;
use epimix_core::posterior::{EppPosterior, PosteriorSettings};
use epimix_core::priors::Hyper;
use epimix_core::synth::{generate_area, generate_country, SynthArea, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{
    CombineArgs, CorrelateArgs, EvaluateArgs, FitArgs, HyperfitArgs, ProjectArgs, QuantityArg, ScenarioArg, SplitArgs,
    SynthArgs,
};

/// One area in a synthesis spec; `design` falls back to the spec-wide template.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthAreaEntry {
    pub id: String,
    #[serde(default)]
    pub theta: Option<Theta>,
    #[serde(default)]
    pub design: Option<SynthSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthFile {
    /// Mixture hyperparameters to draw thetas from; the default weights when absent.
    #[serde(default)]
    pub hyper: Option<PathBuf>,
    #[serde(default)]
    pub design: SynthSpec,
    pub areas: Vec<SynthAreaEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleMeta {
    pub area_id: String,
    pub seed: u64,
    pub config: ImisConfig,
    pub use_surveys: bool,
    pub split: Option<SplitSpec>,
    pub iterations: usize,
    pub n_total: usize,
    pub n_stored: usize,
    pub effective_sample_size: f64,
    pub expected_unique_fraction: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JointMeta {
    pub area_ids: Vec<String>,
    pub seed: u64,
    pub config: CombineConfig,
    pub hyper: Hyper,
    pub unique_count: usize,
    pub unique_efficiency: f64,
    pub candidate_ess: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AreaMetrics {
    pub area: String,
    pub segment: Segment,
    pub mae_independent: f64,
    pub mae_mixture: f64,
    /// Independent minus mixture; positive means the mixture predicts better.
    pub improvement: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: Scenario,
    pub granularity: MaeGranularity,
    pub areas: Vec<AreaMetrics>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Core(epimix_core::Error::Data(format!("input file {} does not exist", p.display()))))
    }
}

fn load_hyper(path: Option<&Path>) -> CliResult<Hyper> {
    match path {
        None => Ok(Hyper::reference()),
        Some(p) => {
            require_file(p)?;
            let h: Hyper = io::read_json(p)?;
            h.validate().map_err(|e| config_err(format!("{}: {e}", p.display())))?;
            Ok(h)
        }
    }
}

fn split_spec(args: &SplitArgs) -> Option<SplitSpec> {
    args.scenario.map(|s| SplitSpec {
        scenario: match s {
            ScenarioArg::Last3 => Scenario::Last3,
            ScenarioArg::Mid6 => Scenario::Mid6,
        },
        low_quality_area: args.low_quality_area.clone(),
    })
}

fn settings(cfg: &RunConfig) -> PosteriorSettings {
    PosteriorSettings {
        demog: cfg.demog,
        re_prior: cfg.re_prior,
        use_surveys: cfg.use_surveys,
        ..Default::default()
    }
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> CliResult<()> {
    require_file(&args.spec)?;
    let seed = cfg.require_seed()?;
    let text = fs::read_to_string(&args.spec).map_err(epimix_core::Error::from)?;
    let spec: SynthFile = if args.spec.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", args.spec.display())))?
    } else {
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", args.spec.display())))?
    };
    if spec.areas.is_empty() {
        return Err(config_err("synthesis spec lists no areas"));
    }
    let designs: Vec<(String, SynthSpec)> = spec
        .areas
        .iter()
        .map(|a| (a.id.clone(), a.design.clone().unwrap_or_else(|| spec.design.clone())))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(io::child_seed(seed, &["synth"]));
    let given = spec.areas.iter().filter(|a| a.theta.is_some()).count();
    let areas: Vec<SynthArea> = if given == spec.areas.len() {
        spec.areas
            .iter()
            .zip(&designs)
            .map(|(a, (id, d))| {
                let mut r = ChaCha20Rng::seed_from_u64(io::child_seed(seed, &["synth", id]));
                generate_area(id, a.theta.as_ref().expect("checked"), d, &mut r)
            })
            .collect::<Result<_, _>>()?
    } else if given == 0 {
        let hyper_path = spec.hyper.as_ref().map(|h| args.spec.parent().unwrap_or(Path::new(".")).join(h));
        let hyper = load_hyper(hyper_path.as_deref().or(cfg.hyper.as_deref()))?;
        generate_country(&hyper, &designs, &mut rng)?
    } else {
        return Err(config_err("give theta for every area or for none"));
    };

    let datasets: Vec<AncDataset> = areas.iter().map(|a| a.data.clone()).collect();
    io::atomic_write(&cfg.out.join("anc.csv"), &io::anc_csv(&datasets)?)?;
    let surveys: Vec<(String, SurveyObservation)> = areas
        .iter()
        .flat_map(|a| a.surveys.iter().map(|s| (a.data.area_id.clone(), *s)))
        .collect();
    if !surveys.is_empty() {
        io::atomic_write(&cfg.out.join("surveys.csv"), &io::surveys_csv(&surveys)?)?;
    }
    let truth: Vec<_> = areas.iter().map(|a| a.truth_record()).collect();
    io::write_json(&cfg.out.join("truth.json"), &truth)?;
    Ok(())
}

fn read_optional_surveys(path: Option<&Path>) -> CliResult<BTreeMap<String, Vec<SurveyObservation>>> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => {
            require_file(p)?;
            Ok(io::read_surveys(fs::File::open(p).map_err(epimix_core::Error::from)?)?)
        }
    }
}

fn read_anc(path: &Path) -> CliResult<Vec<AncDataset>> {
    require_file(path)?;
    Ok(io::read_anc_file(path)?)
}

pub fn fit(cfg: &RunConfig, args: &FitArgs) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let mut datasets = read_anc(&args.anc)?;
    let surveys = read_optional_surveys(args.surveys.as_deref())?;
    if !args.areas.is_empty() {
        for a in &args.areas {
            if !datasets.iter().any(|d| &d.area_id == a) {
                return Err(CliError::Core(epimix_core::Error::Data(format!("area {a} not in {}", args.anc.display()))));
            }
        }
        datasets.retain(|d| args.areas.contains(&d.area_id));
    }
    let split = split_spec(&args.split);
    let dir = cfg.out.join("samples");
    for data in &datasets {
        let train = match &split {
            Some(s) => epimix_core::evaluation::split(data, s)?.train,
            None => data.clone(),
        };
        let area_surveys = surveys.get(&data.area_id).cloned().unwrap_or_default();
        // Project over the full data horizon so held-out years stay finite for every draw.
        let horizon = PosteriorSettings { end_year: data.years().into_iter().chain(area_surveys.iter().map(|s| s.year)).max(), ..settings(cfg) };
        let post = EppPosterior::new(&train, &area_surveys, &horizon)?;
        let area_seed = io::child_seed(seed, &["fit", &data.area_id]);
        let mut rng = ChaCha20Rng::seed_from_u64(area_seed);
        let (ws, out) = post.fit(&data.area_id, &cfg.imis, &mut rng)?;
        log::info!(
            "area {}: {} iterations, {} stored draws, ESS {:.1}",
            data.area_id,
            out.iterations,
            ws.len(),
            out.effective_sample_size()
        );
        let stem = safe_name(&data.area_id);
        io::atomic_write(&dir.join(format!("{stem}.csv")), &io::samples_csv(&ws)?)?;
        let meta = SampleMeta {
            area_id: data.area_id.clone(),
            seed: area_seed,
            config: cfg.imis,
            use_surveys: cfg.use_surveys,
            split: split.clone(),
            iterations: out.iterations,
            n_total: out.n_total,
            n_stored: ws.len(),
            effective_sample_size: out.effective_sample_size(),
            expected_unique_fraction: out.expected_unique_fraction,
        };
        io::write_json(&dir.join(format!("{stem}.json")), &meta)?;
    }
    Ok(())
}

fn safe_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Expand directories to their `.csv` files, sorted by name.
fn sample_files(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(epimix_core::Error::from)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|e| e == "csv"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            require_file(p)?;
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(config_err("no sample files found"));
    }
    Ok(files)
}

/// Area id from the JSON sidecar when present, else the file stem.
fn load_samples(files: &[PathBuf]) -> CliResult<Vec<WeightedSamples>> {
    files
        .iter()
        .map(|f| {
            let sidecar = f.with_extension("json");
            let area = if sidecar.is_file() {
                io::read_json::<SampleMeta>(&sidecar)?.area_id
            } else {
                f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            };
            let file = fs::File::open(f).map_err(epimix_core::Error::from)?;
            Ok(io::read_samples(&area, file)?)
        })
        .collect()
}

pub fn combine(cfg: &RunConfig, args: &CombineArgs) -> CliResult<()> {
    let seed = cfg.require_seed()?;
    let hyper = load_hyper(args.hyper.as_deref().or(cfg.hyper.as_deref()))?;
    let per_area = load_samples(&sample_files(&args.samples)?)?;
    let combine_seed = io::child_seed(seed, &["combine"]);
    let mut rng = ChaCha20Rng::seed_from_u64(combine_seed);
    let jp = combine_areas(&per_area, &hyper, &cfg.combine, &mut rng)?;
    io::atomic_write(&cfg.out.join("joint.csv"), &io::joint_csv(&jp)?)?;
    let meta = JointMeta {
        area_ids: jp.area_ids.clone(),
        seed: combine_seed,
        config: cfg.combine,
        hyper,
        unique_count: jp.unique_count,
        unique_efficiency: unique_efficiency(&jp),
        candidate_ess: jp.candidate_ess,
    };
    io::write_json(&cfg.out.join("joint.json"), &meta)?;
    Ok(())
}

pub fn hyperfit(cfg: &RunConfig, args: &HyperfitArgs) -> CliResult<()> {
    require_file(&args.estimates)?;
    let table = io::read_point_estimates(fs::File::open(&args.estimates).map_err(epimix_core::Error::from)?)?;
    let mut screen = cfg.screen;
    if args.no_screen {
        screen.enabled = false;
    }
    let kept = table.screened(&screen);
    if kept.countries.len() < table.countries.len() {
        log::warn!("quality screen dropped {} countries", table.countries.len() - kept.countries.len());
    }
    let base = Hyper::reference();
    let result = estimate_hyperparameters(&kept, &base.mu0, &base.sigma0, &cfg.hyperfit)?;
    let hyper = result.into_hyper(base.mu0, base.sigma0, &cfg.hyperfit);
    io::write_json(&cfg.out.join("hyper.json"), &hyper)?;
    Ok(())
}

fn read_joint(path: &Path) -> CliResult<JointPosterior> {
    require_file(path)?;
    Ok(io::read_joint(fs::File::open(path).map_err(epimix_core::Error::from)?)?)
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> CliResult<()> {
    let spec = split_spec(&args.split).ok_or_else(|| config_err("evaluate needs --scenario"))?;
    let datasets = read_anc(&args.anc)?;
    let per_area = load_samples(&sample_files(&args.samples)?)?;
    let jp = read_joint(&args.joint)?;
    let exec = cfg.imis.execution;
    let mut areas = Vec::new();
    for data in &datasets {
        let s = split(data, &spec)?;
        let ws = per_area
            .iter()
            .find(|w| w.area_id == data.area_id)
            .ok_or_else(|| CliError::Core(epimix_core::Error::Data(format!("no samples for area {}", data.area_id))))?;
        let a = jp
            .area_index(&data.area_id)
            .ok_or_else(|| CliError::Core(epimix_core::Error::Data(format!("area {} not in joint", data.area_id))))?;
        let end = data.years().last().copied().unwrap_or(1970);
        let ind = anc_prediction(&ws.thetas, &ws.weight, &cfg.demog, end, exec)?;
        let mix = anc_prediction(&jp.area_thetas(a), &jp.weights, &cfg.demog, end, exec)?;
        for segment in [Segment::Early, Segment::Late] {
            let test = s.segment(segment);
            if test.is_empty() {
                continue;
            }
            let mi = mae_clinic_prevalence(&ind, &test, cfg.mae_granularity)?;
            let mm = mae_clinic_prevalence(&mix, &test, cfg.mae_granularity)?;
            areas.push(AreaMetrics {
                area: data.area_id.clone(),
                segment,
                mae_independent: mi,
                mae_mixture: mm,
                improvement: mi - mm,
            });
        }
    }
    let metrics = Metrics { scenario: spec.scenario, granularity: cfg.mae_granularity, areas };
    io::write_json(&cfg.out.join("metrics.json"), &metrics)?;
    Ok(())
}

pub fn project(cfg: &RunConfig, args: &ProjectArgs) -> CliResult<()> {
    require_file(&args.theta)?;
    let theta: Theta = io::read_json(&args.theta)?;
    let proj = project_epidemic(&theta, &cfg.demog, args.start, args.end)?;
    io::atomic_write(&cfg.out.join("trajectory.csv"), &io::trajectory_csv(&proj)?)?;
    Ok(())
}

pub fn correlate(cfg: &RunConfig, args: &CorrelateArgs) -> CliResult<()> {
    let jp = read_joint(&args.joint)?;
    let (quantity, name) = match args.quantity {
        QuantityArg::Prevalence => (Quantity::Prevalence, "prevalence"),
        QuantityArg::Incidence => (Quantity::Incidence, "incidence"),
    };
    let rows = cross_area_correlation(&jp, quantity, &cfg.demog, args.end_year, cfg.imis.execution)?;
    io::atomic_write(
        &cfg.out.join(format!("correlation_{name}.csv")),
        &io::correlation_csv(&rows, &jp.area_ids)?,
    )?;
    Ok(())
}
