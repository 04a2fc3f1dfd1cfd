//! Experiment runner and localization metrics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{lighting_grid, sample_queries, DatasetError, QuerySpec, SunAngles};
use crate::geom::{GeomError, PerspectiveIntrinsics, Pose};
use crate::io::{self, IoError};
use crate::lighting::{SunConfig, DEFAULT_DIAMETER_DEG, DEFAULT_SHADOW_SAMPLES};
use crate::localize::{localize, Diagnostics, LocalizeParams, PnpStatus, PoseEstimate};
use crate::matchers::{matcher_by_name, MatchError, ScaleSearch, MATCHER_NAMES};
use crate::render::{map_camera, place_camera, render_ortho, render_perspective, RenderError, RenderSettings, RenderedImage};
use crate::terrain::{generate_synthetic_terrain, load_terrain, SynthParams, TerrainAccel, TerrainError, TerrainModel};

pub mod pipeline;

pub const CDF_MAX_M: f64 = 10.0;
pub const CDF_STEP_M: f64 = 0.1;

#[derive(thiserror::Error, Debug)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no errors to summarize")]
    Empty,
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Translation error `‖t_gt − t̃‖`; failures are infinite.
pub fn localization_error(gt: &Pose, est: &PoseEstimate) -> f64 {
    match (&est.status, &est.pose) {
        (PnpStatus::Ok, Some(p)) => (gt.t_wc - p.t_wc).norm(),
        _ => f64::INFINITY,
    }
}

/// Fraction of errors strictly below `radius`.
pub fn accuracy_at(errors: &[f64], radius: f64) -> Result<f64, HarnessError> {
    if errors.is_empty() {
        return Err(HarnessError::Empty);
    }
    Ok(errors.iter().filter(|e| **e < radius).count() as f64 / errors.len() as f64)
}

/// `F(x) = |{e ≤ x}| / N` on `0, step, …, max`.
pub fn cdf(errors: &[f64], max: f64, step: f64) -> Vec<(f64, f64)> {
    let n = (max / step).round() as usize;
    let total = errors.len().max(1) as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    (0..=n)
        .map(|k| {
            let x = k as f64 * step;
            let count = sorted.partition_point(|e| *e <= x);
            (x, count as f64 / total)
        })
        .collect()
}

/// Median with infinite failures included; `None` for no samples.
pub fn median(errors: &[f64]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let mut s = errors.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TerrainSource {
    Synthetic(SynthParams),
    File { dtm: PathBuf, texture: PathBuf },
}

impl TerrainSource {
    pub fn load(&self) -> Result<TerrainModel, HarnessError> {
        match self {
            TerrainSource::Synthetic(p) => {
                if !(p.size_m > 0.0 && p.post_spacing_m > 0.0) {
                    return Err(HarnessError::Config("terrain size and spacing must be positive".into()));
                }
                Ok(generate_synthetic_terrain(p))
            }
            TerrainSource::File { dtm, texture } => Ok(load_terrain(dtm, texture)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub terrain: TerrainSource,
    pub map_pixel_m: f64,
    pub map_azimuths: Vec<f64>,
    pub map_elevations: Vec<f64>,
    /// Explicit (AZ, EL) list, e.g. a time-of-day table; replaces the grid.
    pub map_lighting: Option<Vec<SunAngles>>,
    pub query_sun: SunAngles,
    pub sun_diameter_deg: f64,
    pub shadow_samples: usize,
    pub query_count: usize,
    pub altitude_bins: Vec<[f64; 2]>,
    pub optics: PerspectiveIntrinsics,
    pub matcher: String,
    /// Pass the true-altitude GSD ratio to the matcher.
    pub scale_hint: bool,
    pub localize: LocalizeParams,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            terrain: TerrainSource::Synthetic(SynthParams::default()),
            map_pixel_m: 0.25,
            map_azimuths: vec![180.0],
            map_elevations: vec![40.0],
            map_lighting: None,
            query_sun: SunAngles { az: 180.0, el: 40.0 },
            sun_diameter_deg: DEFAULT_DIAMETER_DEG,
            shadow_samples: DEFAULT_SHADOW_SAMPLES,
            query_count: 100,
            altitude_bins: vec![[64.0, 112.0], [112.0, 155.0], [155.0, 200.0]],
            optics: PerspectiveIntrinsics::reference_query(),
            matcher: "ncc".into(),
            scale_hint: false,
            localize: LocalizeParams::default(),
            output_dir: None,
            seed: 42,
        }
    }
}

impl ExperimentConfig {
    pub fn lightings(&self) -> Vec<SunAngles> {
        match &self.map_lighting {
            Some(l) => l.clone(),
            None => lighting_grid(&self.map_azimuths, &self.map_elevations),
        }
    }

    pub fn altitude_range(&self) -> (f64, f64) {
        (
            self.altitude_bins.first().map_or(0.0, |b| b[0]),
            self.altitude_bins.last().map_or(0.0, |b| b[1]),
        )
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.altitude_bins.is_empty() {
            return bad("at least one altitude bin is required".into());
        }
        for (i, b) in self.altitude_bins.iter().enumerate() {
            if !(b[0] > 0.0 && b[1] > b[0]) {
                return bad(format!("altitude bin {i} is [{}, {}]", b[0], b[1]));
            }
            if i > 0 && self.altitude_bins[i - 1][1] != b[0] {
                return bad(format!("altitude bins {} and {i} are not contiguous", i - 1));
            }
        }
        if self.query_count == 0 {
            return bad("query count must be at least 1".into());
        }
        if !(self.map_pixel_m > 0.0) {
            return bad(format!("map pixel size {}", self.map_pixel_m));
        }
        if self.lightings().is_empty() {
            return bad("no map lighting given".into());
        }
        if !MATCHER_NAMES.contains(&self.matcher.as_str()) {
            return bad(format!("unknown matcher {:?}", self.matcher));
        }
        if self.shadow_samples == 0 {
            return bad("shadow samples must be at least 1".into());
        }
        self.optics.validate()?;
        Ok(())
    }

    pub fn sun(&self, a: SunAngles) -> SunConfig {
        SunConfig::new(a.az, a.el).with_diameter(self.sun_diameter_deg)
    }

    /// Scale range spanned by the altitude bins against the map pixel size.
    pub fn scale_search(&self) -> ScaleSearch {
        let (lo, hi) = self.altitude_range();
        ScaleSearch {
            min: self.optics.ground_sample_distance(lo) / self.map_pixel_m,
            max: self.optics.ground_sample_distance(hi) / self.map_pixel_m,
            hint: None,
        }
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            shadow_samples: self.shadow_samples,
            seed: self.seed,
            ..RenderSettings::default()
        }
    }
}

/// One localization attempt; the column set of the per-query CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: usize,
    pub alt_m: f64,
    pub map_az_deg: f64,
    pub map_el_deg: f64,
    pub query_az_deg: f64,
    pub query_el_deg: f64,
    pub matcher: String,
    pub status: String,
    pub err_m: f64,
    pub inliers: usize,
    pub reproj_px: Option<f64>,
    pub ms_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub d_az_deg: f64,
    pub d_el_deg: f64,
    pub alt_bin: String,
    pub n: usize,
    pub at1m: f64,
    pub median_m: f64,
    pub fail_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rows: Vec<QueryRow>,
    pub cells: Vec<CellSummary>,
    pub at1m: f64,
    pub median_m: f64,
    pub cdf: Vec<(f64, f64)>,
    pub failures: BTreeMap<String, usize>,
}

/// Azimuth difference wrapped to (−180, 180].
pub fn azimuth_delta(map_az: f64, query_az: f64) -> f64 {
    let d = (map_az - query_az).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

pub fn altitude_bin_label(bins: &[[f64; 2]], alt: f64) -> String {
    let last = bins.len().saturating_sub(1);
    bins.iter()
        .enumerate()
        .find(|(i, b)| alt >= b[0] && (alt < b[1] || (*i == last && alt <= b[1])))
        .map(|(_, b)| format!("{}-{}", b[0], b[1]))
        .unwrap_or_else(|| "out-of-range".into())
}

/// Aggregates rows per (ΔAZ, ΔEL, altitude bin) cell, in key order.
pub fn summarize(rows: &[QueryRow], bins: &[[f64; 2]]) -> Result<MetricsReport, HarnessError> {
    let errors: Vec<f64> = rows.iter().map(|r| r.err_m).collect();
    let at1m = accuracy_at(&errors, 1.0)?;
    type Key = (i64, i64, usize, String);
    let mut cells: BTreeMap<Key, (f64, f64, Vec<f64>)> = BTreeMap::new();
    let bin_index = |label: &str| {
        bins.iter()
            .position(|b| format!("{}-{}", b[0], b[1]) == label)
            .unwrap_or(bins.len())
    };
    for r in rows {
        let d_az = azimuth_delta(r.map_az_deg, r.query_az_deg);
        let d_el = r.map_el_deg - r.query_el_deg;
        let label = altitude_bin_label(bins, r.alt_m);
        let key = ((d_az * 1e6).round() as i64, (d_el * 1e6).round() as i64, bin_index(&label), label);
        cells.entry(key).or_insert((d_az, d_el, Vec::new())).2.push(r.err_m);
    }
    let cells = cells
        .into_iter()
        .map(|((_, _, _, label), (d_az, d_el, errs))| CellSummary {
            d_az_deg: d_az,
            d_el_deg: d_el,
            alt_bin: label,
            n: errs.len(),
            at1m: accuracy_at(&errs, 1.0).unwrap_or(0.0),
            median_m: median(&errs).unwrap_or(f64::NAN),
            fail_n: errs.iter().filter(|e| !e.is_finite()).count(),
        })
        .collect();
    let mut failures = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status != PnpStatus::Ok.as_str()) {
        *failures.entry(r.status.clone()).or_insert(0) += 1;
    }
    Ok(MetricsReport {
        rows: rows.to_vec(),
        cells,
        at1m,
        median_m: median(&errors).unwrap_or(f64::NAN),
        cdf: cdf(&errors, CDF_MAX_M, CDF_STEP_M),
        failures,
    })
}

/// A rendered query with its ground truth.
#[derive(Debug, Clone)]
pub struct QueryImage {
    pub spec: QuerySpec,
    pub pose: Pose,
    pub image: RenderedImage,
}

pub fn render_queries(
    accel: &TerrainAccel,
    specs: &[QuerySpec],
    settings: &RenderSettings,
) -> Result<Vec<QueryImage>, HarnessError> {
    specs
        .iter()
        .map(|q| {
            let pose = place_camera(accel, q.x, q.y, q.altitude_agl)?;
            let image = render_perspective(accel, &q.optics, &pose, &q.sun, settings)?;
            Ok(QueryImage {
                spec: q.clone(),
                pose,
                image,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDiagnostics {
    pub query_id: usize,
    pub map_sun: SunAngles,
    pub diagnostics: Option<Diagnostics>,
    pub error: Option<String>,
}

pub struct ExperimentOutput {
    pub report: MetricsReport,
    pub diagnostics: Vec<QueryDiagnostics>,
}

/// Localizes every query against one map.
pub fn localize_queries(
    config: &ExperimentConfig,
    map: &RenderedImage,
    map_sun: SunAngles,
    queries: &[QueryImage],
) -> Result<Vec<(QueryRow, QueryDiagnostics)>, HarnessError> {
    let k = config.optics.camera_matrix()?;
    let scales = config.scale_search();
    queries
        .par_iter()
        .map(|q| {
            let hint = config
                .scale_hint
                .then(|| q.spec.optics.ground_sample_distance(q.spec.altitude_agl) / config.map_pixel_m);
            let matcher = matcher_by_name(&config.matcher, ScaleSearch { hint, ..scales })?;
            let mut params = config.localize.clone();
            params.ransac.seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(q.spec.id as u64);
            let result = localize(&q.image.gray, &k, map, matcher.as_ref(), [q.spec.x, q.spec.y], &params);
            let (status, err, inliers, reproj, ms, diag, error) = match result {
                Ok(loc) => (
                    loc.estimate.status.as_str().to_string(),
                    localization_error(&q.pose, &loc.estimate),
                    loc.estimate.inliers.len(),
                    loc.diagnostics.reproj_px,
                    loc.diagnostics.timing.total(),
                    Some(loc.diagnostics),
                    None,
                ),
                Err(e) => ("error".to_string(), f64::INFINITY, 0, None, 0.0, None, Some(e.to_string())),
            };
            Ok((
                QueryRow {
                    query_id: q.spec.id,
                    alt_m: q.spec.altitude_agl,
                    map_az_deg: map_sun.az,
                    map_el_deg: map_sun.el,
                    query_az_deg: q.spec.sun.azimuth_deg,
                    query_el_deg: q.spec.sun.elevation_deg,
                    matcher: config.matcher.clone(),
                    status,
                    err_m: err,
                    inliers,
                    reproj_px: reproj,
                    ms_total: ms,
                },
                QueryDiagnostics {
                    query_id: q.spec.id,
                    map_sun,
                    diagnostics: diag,
                    error,
                },
            ))
        })
        .collect()
}

/// Renders the maps, samples and renders the queries, localizes every query
/// against every map lighting and aggregates the errors.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    config.validate()?;
    let terrain = config.terrain.load()?;
    let accel = TerrainAccel::build(&terrain)?;
    let settings = config.render_settings();
    let query_sun = config.sun(config.query_sun);
    let specs = sample_queries(
        &terrain,
        config.query_count,
        config.altitude_range(),
        config.seed,
        &config.optics,
        &query_sun,
    )?;
    let queries = render_queries(&accel, &specs, &settings)?;
    let (oi, map_pose) = map_camera(terrain.extent(), config.map_pixel_m);
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for sun in config.lightings() {
        let map = render_ortho(&accel, &oi, &map_pose, &config.sun(sun), &settings)?;
        for (row, diag) in localize_queries(config, &map, sun, &queries)? {
            rows.push(row);
            diagnostics.push(diag);
        }
    }
    let report = summarize(&rows, &config.altitude_bins)?;
    let out = ExperimentOutput { report, diagnostics };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &out, &config.altitude_bins)?;
    }
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_query_csv(path: &Path, rows: &[QueryRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "query_id",
        "alt_m",
        "map_az_deg",
        "map_el_deg",
        "query_az_deg",
        "query_el_deg",
        "matcher",
        "status",
        "err_m",
        "inliers",
        "reproj_px",
        "ms_total",
    ])?;
    for r in rows {
        w.write_record([
            r.query_id.to_string(),
            r.alt_m.to_string(),
            r.map_az_deg.to_string(),
            r.map_el_deg.to_string(),
            r.query_az_deg.to_string(),
            r.query_el_deg.to_string(),
            r.matcher.clone(),
            r.status.clone(),
            r.err_m.to_string(),
            r.inliers.to_string(),
            fmt_opt(r.reproj_px),
            r.ms_total.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(io::write_bytes(path, &bytes)?)
}

pub fn read_query_csv(path: &Path) -> Result<Vec<QueryRow>, HarnessError> {
    let bytes = io::read_bytes(path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec[i].parse().map_err(|_| HarnessError::Config(format!("bad number {:?}", &rec[i])))
        };
        rows.push(QueryRow {
            query_id: f(0)? as usize,
            alt_m: f(1)?,
            map_az_deg: f(2)?,
            map_el_deg: f(3)?,
            query_az_deg: f(4)?,
            query_el_deg: f(5)?,
            matcher: rec[6].to_string(),
            status: rec[7].to_string(),
            err_m: f(8)?,
            inliers: f(9)? as usize,
            reproj_px: if rec[10].is_empty() { None } else { Some(f(10)?) },
            ms_total: f(11)?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, cells: &[CellSummary]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["d_az_deg", "d_el_deg", "alt_bin", "n", "at1m", "median_m", "fail_n"])?;
    for c in cells {
        w.write_record([
            c.d_az_deg.to_string(),
            c.d_el_deg.to_string(),
            c.alt_bin.clone(),
            c.n.to_string(),
            c.at1m.to_string(),
            c.median_m.to_string(),
            c.fail_n.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(io::write_bytes(path, &bytes)?)
}

/// Plain-text CDF tables: the overall curve, then one per cell.
pub fn cdf_table(report: &MetricsReport, bins: &[[f64; 2]]) -> String {
    let mut s = String::new();
    let mut table = |title: String, curve: &[(f64, f64)]| {
        s.push_str(&format!("# {title}\n# err_m\tF\n"));
        for (x, f) in curve {
            s.push_str(&format!("{x:.1}\t{f:.4}\n"));
        }
        s.push('\n');
    };
    table("all".into(), &report.cdf);
    for c in &report.cells {
        let errs: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| {
                azimuth_delta(r.map_az_deg, r.query_az_deg) == c.d_az_deg
                    && r.map_el_deg - r.query_el_deg == c.d_el_deg
                    && altitude_bin_label(bins, r.alt_m) == c.alt_bin
            })
            .map(|r| r.err_m)
            .collect();
        table(
            format!("d_az={} d_el={} alt={} n={}", c.d_az_deg, c.d_el_deg, c.alt_bin, c.n),
            &cdf(&errs, CDF_MAX_M, CDF_STEP_M),
        );
    }
    s
}

/// Writes the per-query CSV, summary CSV, CDF tables, JSON report and,
/// when present, the diagnostics records.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput, bins: &[[f64; 2]]) -> Result<(), HarnessError> {
    write_query_csv(&dir.join("queries.csv"), &out.report.rows)?;
    write_summary_csv(&dir.join("summary.csv"), &out.report.cells)?;
    io::write_bytes(&dir.join("cdf.txt"), cdf_table(&out.report, bins).as_bytes())?;
    let mut report = out.report.clone();
    report.rows.clear();
    io::write_json(&dir.join("report.json"), &report)?;
    if !out.diagnostics.is_empty() {
        write_diagnostics(&dir.join("diagnostics.jsonl"), &out.diagnostics)?;
    }
    Ok(())
}

pub fn write_diagnostics(path: &Path, diagnostics: &[QueryDiagnostics]) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    for d in diagnostics {
        let line = serde_json::to_vec(d).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        buf.extend_from_slice(&line);
        buf.push(b'\n');
    }
    Ok(io::write_bytes(path, &buf)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{nadir_pose, Vec3};

    fn estimate(pose: Option<Pose>, status: PnpStatus) -> PoseEstimate {
        PoseEstimate {
            status,
            pose,
            inliers: vec![],
            reproj_px: 0.0,
            iterations: 0,
        }
    }

    #[test]
    fn error_examples() {
        let gt = nadir_pose(1.0, 2.0, 3.0);
        assert_eq!(localization_error(&gt, &estimate(Some(gt), PnpStatus::Ok)), 0.0);
        let off = Pose {
            t_wc: gt.t_wc + Vec3::new(0.6, 0.8, 0.0),
            ..gt
        };
        assert!((localization_error(&gt, &estimate(Some(off), PnpStatus::Ok)) - 1.0).abs() < 1e-15);
        assert_eq!(
            localization_error(&gt, &estimate(None, PnpStatus::Degenerate)),
            f64::INFINITY
        );
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_at(&[0.5, 1.5], 1.0).unwrap(), 0.5);
        assert_eq!(accuracy_at(&[f64::INFINITY; 3], 1.0).unwrap(), 0.0);
        assert_eq!(accuracy_at(&[1.0], 1.0).unwrap(), 0.0);
        assert!(matches!(accuracy_at(&[], 1.0), Err(HarnessError::Empty)));
    }

    #[test]
    fn cdf_examples() {
        let c = cdf(&[0.0], 10.0, 0.1);
        assert_eq!(c.len(), 101);
        assert!(c.iter().all(|(_, f)| *f == 1.0));
        let c = cdf(&[0.5, 12.0, f64::INFINITY], 10.0, 0.1);
        assert!(c.last().unwrap().1 < 1.0);
        assert!(c.windows(2).all(|w| w[1].1 >= w[0].1));
    }

    #[test]
    fn azimuth_wrap_and_bins() {
        assert_eq!(azimuth_delta(10.0, 350.0), 20.0);
        assert_eq!(azimuth_delta(350.0, 10.0), -20.0);
        assert_eq!(azimuth_delta(0.0, 180.0), 180.0);
        let bins = [[64.0, 112.0], [112.0, 155.0], [155.0, 200.0]];
        assert_eq!(altitude_bin_label(&bins, 64.0), "64-112");
        assert_eq!(altitude_bin_label(&bins, 112.0), "112-155");
        assert_eq!(altitude_bin_label(&bins, 200.0), "155-200");
        assert_eq!(altitude_bin_label(&bins, 201.0), "out-of-range");
    }

    #[test]
    fn config_validation() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let gap = ExperimentConfig {
            altitude_bins: vec![[64.0, 100.0], [112.0, 155.0]],
            ..ExperimentConfig::default()
        };
        assert!(gap.validate().is_err());
        let m = ExperimentConfig {
            matcher: "sift".into(),
            ..ExperimentConfig::default()
        };
        assert!(m.validate().is_err());
        let json = serde_json::to_string(&c).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"query_count": 3, "matcher": "phase"}"#).unwrap();
        assert_eq!(partial.query_count, 3);
        assert_eq!(partial.altitude_bins.len(), 3);
    }
}
