//! File formats: ANC and survey CSV, posterior samples, joint draws, point
//! estimates, correlations and trajectories. Writers go through a temporary
//! file and rename so a crash never leaves a truncated artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::combine::JointPosterior;
use crate::error::{Error, Result};
use crate::evaluation::YearCorrelation;
use crate::hyperfit::{CountryEstimates, PointEstimateTable};
use crate::imis::WeightedSamples;
use crate::likelihood::{AncDataset, AncObservation, SurveyObservation};
use crate::model::Projection;
use crate::params::{Theta, N_PARAMS, PARAM_NAMES};

pub const ANC_COLUMNS: [&str; 5] = ["area", "clinic", "year", "pos", "tested"];
pub const SURVEY_COLUMNS: [&str; 4] = ["area", "year", "prevalence", "se_probit"];

/// Write `bytes` to `path` via a sibling temporary file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Deterministic child seed from a master seed and labels.
pub fn child_seed(master: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Row { line, message: format!("{kind:?}") },
    }
}

struct Columns(Vec<usize>);

impl Columns {
    fn find(headers: &csv::StringRecord, names: &[&str]) -> Result<Self> {
        names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h.trim() == *n)
                    .ok_or_else(|| Error::MissingColumn(n.to_string()))
            })
            .collect::<Result<_>>()
            .map(Columns)
    }

    fn optional(headers: &csv::StringRecord, name: &str) -> Option<usize> {
        headers.iter().position(|h| h.trim() == name)
    }
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str) -> Result<&'a str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Row {
        line: line_of(rec),
        message: format!("missing value for '{name}'"),
    })
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn parse<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let raw = field(rec, idx, name)?;
    raw.parse().map_err(|_| Error::Row {
        line: line_of(rec),
        message: format!("cannot parse '{raw}' as {name}"),
    })
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(r)
}

fn to_string(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Parse the ANC CSV into one dataset per area, in order of first appearance.
pub fn read_anc<R: Read>(r: R) -> Result<Vec<AncDataset>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let cols = Columns::find(&headers, &ANC_COLUMNS)?;
    let mut order: Vec<String> = Vec::new();
    let mut by_area: BTreeMap<String, Vec<AncObservation>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let area = field(&rec, cols.0[0], "area")?.to_string();
        let obs = AncObservation {
            clinic_id: field(&rec, cols.0[1], "clinic")?.to_string(),
            year: parse(&rec, cols.0[2], "year")?,
            y: parse(&rec, cols.0[3], "pos")?,
            n: parse(&rec, cols.0[4], "tested")?,
        };
        if obs.n == 0 || obs.y > obs.n {
            return Err(Error::Row {
                line: line_of(&rec),
                message: "need 0 <= pos <= tested and tested >= 1".into(),
            });
        }
        if !by_area.contains_key(&area) {
            order.push(area.clone());
        }
        by_area.entry(area).or_default().push(obs);
    }
    order
        .into_iter()
        .map(|a| {
            let obs = by_area.remove(&a).expect("area recorded");
            AncDataset::new(a, obs)
        })
        .collect()
}

pub fn read_anc_file(path: &Path) -> Result<Vec<AncDataset>> {
    read_anc(fs::File::open(path)?)
}

pub fn anc_csv(datasets: &[AncDataset]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ANC_COLUMNS).map_err(csv_error)?;
    for d in datasets {
        for o in &d.observations {
            w.write_record([d.area_id.clone(), o.clinic_id.clone(), o.year.to_string(), o.y.to_string(), o.n.to_string()])
                .map_err(csv_error)?;
        }
    }
    to_string(w)
}

pub fn read_surveys<R: Read>(r: R) -> Result<BTreeMap<String, Vec<SurveyObservation>>> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let cols = Columns::find(&headers, &SURVEY_COLUMNS)?;
    let mut out: BTreeMap<String, Vec<SurveyObservation>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let s = SurveyObservation {
            year: parse(&rec, cols.0[1], "year")?,
            prevalence: parse(&rec, cols.0[2], "prevalence")?,
            se_probit: parse(&rec, cols.0[3], "se_probit")?,
        };
        if !(s.prevalence > 0.0 && s.prevalence < 1.0 && s.se_probit > 0.0) {
            return Err(Error::Row {
                line: line_of(&rec),
                message: "need 0 < prevalence < 1 and se_probit > 0".into(),
            });
        }
        out.entry(field(&rec, cols.0[0], "area")?.to_string()).or_default().push(s);
    }
    Ok(out)
}

pub fn surveys_csv(surveys: &[(String, SurveyObservation)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SURVEY_COLUMNS).map_err(csv_error)?;
    for (area, s) in surveys {
        w.write_record([area.clone(), s.year.to_string(), s.prevalence.to_string(), s.se_probit.to_string()])
            .map_err(csv_error)?;
    }
    to_string(w)
}

fn theta_fields(t: &Theta) -> impl Iterator<Item = String> {
    t.to_array().into_iter().map(|v| v.to_string())
}

fn theta_from(rec: &csv::StringRecord, cols: &[usize]) -> Result<Theta> {
    let mut v = [0.0; N_PARAMS];
    for (j, &c) in cols.iter().enumerate() {
        v[j] = parse(rec, c, PARAM_NAMES[j])?;
    }
    Ok(Theta::from_array(v))
}

pub fn samples_csv(ws: &WeightedSamples) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = PARAM_NAMES.to_vec();
    header.extend(["log_target", "log_sampler", "weight"]);
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..ws.len() {
        let mut row: Vec<String> = theta_fields(&ws.thetas[i]).collect();
        row.extend([ws.log_target[i].to_string(), ws.log_sampler[i].to_string(), ws.weight[i].to_string()]);
        w.write_record(&row).map_err(csv_error)?;
    }
    to_string(w)
}

/// Without `log_target`/`log_sampler`/`weight` columns the draws get equal weight.
pub fn read_samples<R: Read>(area_id: &str, r: R) -> Result<WeightedSamples> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let cols = Columns::find(&headers, &PARAM_NAMES)?;
    let weight_col = Columns::optional(&headers, "weight");
    let lt_col = Columns::optional(&headers, "log_target");
    let ls_col = Columns::optional(&headers, "log_sampler");
    let mut ws = WeightedSamples {
        area_id: area_id.to_string(),
        thetas: vec![],
        log_target: vec![],
        log_sampler: vec![],
        weight: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        ws.thetas.push(theta_from(&rec, &cols.0)?);
        ws.log_target.push(match lt_col {
            Some(c) => parse(&rec, c, "log_target")?,
            None => f64::NAN,
        });
        ws.log_sampler.push(match ls_col {
            Some(c) => parse(&rec, c, "log_sampler")?,
            None => f64::NAN,
        });
        ws.weight.push(match weight_col {
            Some(c) => parse(&rec, c, "weight")?,
            None => 1.0,
        });
    }
    if ws.is_empty() {
        return Err(Error::Data(format!("area {area_id}: no samples")));
    }
    // Renormalize to absorb rounding in the text representation.
    let total: f64 = ws.weight.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data(format!("area {area_id}: weights do not sum to a positive value")));
    }
    for w in &mut ws.weight {
        *w /= total;
    }
    ws.validate()?;
    Ok(ws)
}

pub fn joint_csv(jp: &JointPosterior) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = vec!["joint", "area"];
    header.extend(PARAM_NAMES);
    w.write_record(&header).map_err(csv_error)?;
    for (i, joint) in jp.joints.iter().enumerate() {
        for (a, t) in joint.iter().enumerate() {
            let mut row = vec![i.to_string(), jp.area_ids[a].clone()];
            row.extend(theta_fields(t));
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    to_string(w)
}

/// Joints from the CSV; diagnostics not stored in it are left at defaults.
pub fn read_joint<R: Read>(r: R) -> Result<JointPosterior> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let idx = Columns::find(&headers, &["joint", "area"])?;
    let cols = Columns::find(&headers, &PARAM_NAMES)?;
    let mut area_ids: Vec<String> = Vec::new();
    let mut joints: Vec<Vec<Theta>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let j: usize = parse(&rec, idx.0[0], "joint")?;
        let area = field(&rec, idx.0[1], "area")?;
        if j == 0 {
            area_ids.push(area.to_string());
        }
        if j == joints.len() {
            joints.push(Vec::new());
        }
        let slot = joints.len() - 1;
        if j != slot || area_ids.get(joints[slot].len()).map(String::as_str) != Some(area) {
            return Err(Error::Row {
                line: line_of(&rec),
                message: "joint rows must be grouped by joint with areas in a fixed order".into(),
            });
        }
        joints[slot].push(theta_from(&rec, &cols.0)?);
    }
    if joints.is_empty() || joints.iter().any(|j| j.len() != area_ids.len()) {
        return Err(Error::Data("incomplete joint posterior".into()));
    }
    let mut keys: Vec<Vec<[u64; N_PARAMS]>> = joints
        .iter()
        .map(|j| j.iter().map(|t| t.to_array().map(f64::to_bits)).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let n = joints.len();
    Ok(JointPosterior {
        area_ids,
        weights: vec![1.0 / n as f64; n],
        unique_count: keys.len(),
        n_candidates: n,
        candidate_ess: f64::NAN,
        joints,
    })
}

pub fn read_point_estimates<R: Read>(r: R) -> Result<PointEstimateTable> {
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let idx = Columns::find(&headers, &["country", "area"])?;
    let cols = Columns::find(&headers, &PARAM_NAMES)?;
    let years_col = Columns::optional(&headers, "years");
    let surveys_col = Columns::optional(&headers, "surveys");
    let mut order: Vec<String> = Vec::new();
    let mut by_country: BTreeMap<String, CountryEstimates> = BTreeMap::new();
    let optional = |rec: &csv::StringRecord, col: Option<usize>, name: &str| -> Result<Option<u32>> {
        match col {
            Some(c) if !field(rec, c, name)?.is_empty() => Ok(Some(parse(rec, c, name)?)),
            _ => Ok(None),
        }
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let country = field(&rec, idx.0[0], "country")?.to_string();
        let entry = by_country.entry(country.clone()).or_insert_with(|| {
            order.push(country.clone());
            CountryEstimates { country, areas: vec![], thetas: vec![], years: vec![], surveys: vec![] }
        });
        entry.areas.push(field(&rec, idx.0[1], "area")?.to_string());
        entry.thetas.push(theta_from(&rec, &cols.0)?);
        entry.years.push(optional(&rec, years_col, "years")?);
        entry.surveys.push(optional(&rec, surveys_col, "surveys")?);
    }
    Ok(PointEstimateTable {
        countries: order.into_iter().map(|c| by_country.remove(&c).expect("country recorded")).collect(),
    })
}

pub fn correlation_csv(rows: &[YearCorrelation], area_ids: &[String]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["year", "area_i", "area_j", "corr"]).map_err(csv_error)?;
    for yc in rows {
        for a in 0..area_ids.len() {
            for b in (a + 1)..area_ids.len() {
                let c = yc.matrix[a][b].map_or_else(|| "NA".to_string(), |v| v.to_string());
                w.write_record([yc.year.to_string(), area_ids[a].clone(), area_ids[b].clone(), c])
                    .map_err(csv_error)?;
            }
        }
    }
    to_string(w)
}

pub fn trajectory_csv(p: &Projection) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["year", "prevalence", "incidence", "r", "infected", "population", "clamped"])
        .map_err(csv_error)?;
    for i in 0..p.years.len() {
        w.write_record([
            p.years[i].to_string(),
            p.rho[i].to_string(),
            p.incidence[i].to_string(),
            p.r_series[i].to_string(),
            p.y_series[i].to_string(),
            p.n_series[i].to_string(),
            p.clamped[i].to_string(),
        ])
        .map_err(csv_error)?;
    }
    to_string(w)
}
