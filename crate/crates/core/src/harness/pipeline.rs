//! File-based stages behind the command-line tool. Every stage reads and
//! writes under one output directory with a fixed layout.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{
    localize_queries, read_query_csv, render_queries, summarize, write_diagnostics, write_outputs, write_query_csv, ExperimentConfig,
    ExperimentOutput, HarnessError, QueryDiagnostics, QueryImage,
};
use crate::dataset::{
    build_triplets, crop_window, sample_queries, write_manifest, MapEntry, QueryEntry, QuerySpec, SunAngles,
    WindowEntry, MIN_TRAINING_OVERLAP,
};
use crate::io;
use crate::localize::tile_windows;
use crate::raster::PixelRect;
use crate::render::{map_camera, render_ortho, RenderedImage};
use crate::terrain::{load_terrain, save_terrain, TerrainAccel, TerrainModel};

/// Fixed artifact layout under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

fn sun_tag(sun: SunAngles) -> String {
    format!("az{}_el{}", sun.az, sun.el)
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dtm(&self) -> PathBuf {
        self.root.join("terrain").join("dtm.f32")
    }

    pub fn texture(&self) -> PathBuf {
        self.root.join("terrain").join("texture.u16")
    }

    pub fn map_base(&self, sun: SunAngles) -> PathBuf {
        self.root.join("maps").join(format!("map_{}", sun_tag(sun)))
    }

    pub fn window_dir(&self, sun: SunAngles) -> PathBuf {
        self.root.join("windows").join(sun_tag(sun))
    }

    pub fn query_specs(&self) -> PathBuf {
        self.root.join("queries.json")
    }

    pub fn query_base(&self, id: usize) -> PathBuf {
        self.root.join("queries").join(format!("q{id:05}"))
    }

    pub fn query_entries(&self) -> PathBuf {
        self.root.join("query_entries.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("triplets.jsonl")
    }

    pub fn queries_csv(&self) -> PathBuf {
        self.root.join("queries.csv")
    }

    /// Path relative to the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }
}

pub fn gen_terrain(config: &ExperimentConfig, layout: &Layout) -> Result<TerrainModel, HarnessError> {
    let terrain = config.terrain.load()?;
    save_terrain(&terrain, &layout.dtm(), &layout.texture())?;
    Ok(terrain)
}

pub fn load_layout_terrain(layout: &Layout) -> Result<TerrainModel, HarnessError> {
    Ok(load_terrain(&layout.dtm(), &layout.texture())?)
}

/// Renders one ortho map per lighting.
pub fn render_maps(config: &ExperimentConfig, layout: &Layout, lightings: &[SunAngles]) -> Result<(), HarnessError> {
    let terrain = load_layout_terrain(layout)?;
    let accel = TerrainAccel::build(&terrain)?;
    let (oi, pose) = map_camera(terrain.extent(), config.map_pixel_m);
    for sun in lightings {
        let map = render_ortho(&accel, &oi, &pose, &config.sun(*sun), &config.render_settings())?;
        map.save(&layout.map_base(*sun))?;
    }
    Ok(())
}

pub fn sample_query_specs(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<QuerySpec>, HarnessError> {
    let terrain = load_layout_terrain(layout)?;
    let specs = sample_queries(
        &terrain,
        config.query_count,
        config.altitude_range(),
        config.seed,
        &config.optics,
        &config.sun(config.query_sun),
    )?;
    io::write_json(&layout.query_specs(), &specs)?;
    Ok(specs)
}

pub fn render_query_images(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<QueryEntry>, HarnessError> {
    let terrain = load_layout_terrain(layout)?;
    let accel = TerrainAccel::build(&terrain)?;
    let specs: Vec<QuerySpec> = io::read_json(&layout.query_specs())?;
    let queries = render_queries(&accel, &specs, &config.render_settings())?;
    let mut entries = Vec::with_capacity(queries.len());
    for q in &queries {
        let base = layout.query_base(q.spec.id);
        q.image.save(&base)?;
        let (gray, _, _) = crate::render::image_paths(&base);
        entries.push(QueryEntry {
            spec: q.spec.clone(),
            image: layout.relative(&gray),
            pose: q.pose.to_record(),
        });
    }
    io::write_json(&layout.query_entries(), &entries)?;
    Ok(entries)
}

pub fn load_query_images(layout: &Layout) -> Result<Vec<QueryImage>, HarnessError> {
    let specs: Vec<QuerySpec> = io::read_json(&layout.query_specs())?;
    specs
        .into_iter()
        .map(|spec| {
            let image = RenderedImage::load(&layout.query_base(spec.id))?;
            Ok(QueryImage {
                pose: image.pose,
                spec,
                image,
            })
        })
        .collect()
}

/// Tiles every map into windows, writes gray and normalized-depth crops and
/// the triplet manifest. Returns the number of triplets.
pub fn make_dataset(config: &ExperimentConfig, layout: &Layout) -> Result<usize, HarnessError> {
    let entries: Vec<QueryEntry> = io::read_json(&layout.query_entries())?;
    let lightings = config.lightings();
    let mut maps = Vec::with_capacity(lightings.len());
    for sun in &lightings {
        let map = RenderedImage::load(&layout.map_base(*sun))?;
        let full = PixelRect::new(0, 0, map.width(), map.height());
        let rects = tile_windows(&full, config.localize.window, config.localize.overlap);
        let dir = layout.window_dir(*sun);
        let windows: Vec<Option<WindowEntry>> = rects
            .par_iter()
            .enumerate()
            .map(|(id, rect)| -> Result<Option<WindowEntry>, HarnessError> {
                let Ok(w) = crop_window(&map, *rect, id) else {
                    return Ok(None);
                };
                let gray = dir.join(format!("w{id:04}.pgm"));
                let depth = dir.join(format!("w{id:04}_depth.pfm"));
                io::write_pgm(&gray, &w.gray)?;
                io::write_pfm(&depth, &w.depth_norm.map(|d| d as f32))?;
                Ok(Some(WindowEntry {
                    id,
                    ground: w.ground,
                    gray: layout.relative(&gray),
                    depth_norm: layout.relative(&depth),
                }))
            })
            .collect::<Result<_, _>>()?;
        maps.push(MapEntry {
            sun: *sun,
            windows: windows.into_iter().flatten().collect(),
        });
    }
    let records = build_triplets(&entries, &maps, &lightings, MIN_TRAINING_OVERLAP)?;
    write_manifest(&layout.manifest(), &records)?;
    Ok(records.len())
}

/// Localizes the rendered queries against every configured map and writes
/// the per-query CSV and diagnostics.
pub fn localize_all(config: &ExperimentConfig, layout: &Layout) -> Result<ExperimentOutput, HarnessError> {
    let queries = load_query_images(layout)?;
    let mut rows = Vec::new();
    let mut diagnostics: Vec<QueryDiagnostics> = Vec::new();
    for sun in config.lightings() {
        let map = RenderedImage::load(&layout.map_base(sun))?;
        for (row, diag) in localize_queries(config, &map, sun, &queries)? {
            rows.push(row);
            diagnostics.push(diag);
        }
    }
    let report = summarize(&rows, &config.altitude_bins)?;
    let out = ExperimentOutput { report, diagnostics };
    write_query_csv(&layout.queries_csv(), &out.report.rows)?;
    write_diagnostics(&layout.root.join("diagnostics.jsonl"), &out.diagnostics)?;
    Ok(out)
}

/// Recomputes the summary, CDF tables and report from the per-query CSV.
pub fn evaluate(config: &ExperimentConfig, layout: &Layout) -> Result<super::MetricsReport, HarnessError> {
    let rows = read_query_csv(&layout.queries_csv())?;
    let report = summarize(&rows, &config.altitude_bins)?;
    let out = ExperimentOutput {
        report,
        diagnostics: Vec::new(),
    };
    write_outputs(&layout.root, &out, &config.altitude_bins)?;
    Ok(out.report)
}
