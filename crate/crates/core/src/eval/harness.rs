//! Builds databases and runs coarse queries from generated data.

use std::path::Path;

use rayon::prelude::*;

use super::{DescriptorDb, RetrievalResult};
use crate::dsm::TieBreak;
use crate::error::Result;
use crate::feat::{ground_descriptor, satellite_descriptor, DescriptorConfig};
use crate::img::{load_png, Image};
use crate::synth::{self, crop_fov, DatasetConfig, SceneRecord};

/// A ground query with its truth.
#[derive(Clone, Debug)]
pub struct Query {
    pub id: u64,
    pub truth_id: u64,
    pub truth_azimuth_deg: f64,
    pub truth_xy: (f64, f64),
    /// Panorama cropped to the query's field of view.
    pub image: Image,
}

fn fill_db(dc: &DescriptorConfig, items: Vec<(u64, f64, f64, Image)>) -> Result<DescriptorDb> {
    let descs = items
        .par_iter()
        .map(|(_, _, _, sat)| satellite_descriptor::<f32>(sat, dc))
        .collect::<Result<Vec<_>>>()?;
    let mut db = DescriptorDb::new(dc.grid_h, dc.grid_w, 2 * dc.channels)?;
    for ((id, x, y, _), d) in items.into_iter().zip(descs) {
        db.insert(id, x, y, d)?;
    }
    Ok(db)
}

/// Renders every record's satellite crop and stores its descriptor.
pub fn build_db_from_records(
    records: &[SceneRecord],
    cfg: &DatasetConfig,
    dc: &DescriptorConfig,
) -> Result<DescriptorDb> {
    let items = records
        .par_iter()
        .map(|r| Ok((r.id, r.ref_x, r.ref_y, r.satellite(&r.scene(cfg)?, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    fill_db(dc, items)
}

/// Reads `references.csv` and `scenes/<id>/sat.png` under a dataset root.
pub fn build_db_from_dir(root: &Path, dc: &DescriptorConfig) -> Result<DescriptorDb> {
    let refs = synth::read_references(root)?;
    let items = refs
        .iter()
        .map(|r| Ok((r.id, r.x_m, r.y_m, load_png(synth::sat_path(root, r.id))?)))
        .collect::<Result<Vec<_>>>()?;
    fill_db(dc, items)
}

/// Renders each record's panorama and crops it to `fov_deg`.
pub fn synthetic_queries(records: &[SceneRecord], cfg: &DatasetConfig, fov_deg: f64) -> Result<Vec<Query>> {
    records
        .par_iter()
        .map(|r| {
            let pano = r.panorama(&r.scene(cfg)?, cfg)?;
            Ok(Query {
                id: r.id,
                truth_id: r.id,
                truth_azimuth_deg: r.azimuth_deg,
                truth_xy: (r.x_m, r.y_m),
                image: crop_fov(&pano, fov_deg)?,
            })
        })
        .collect()
}

/// Loads the `fov_deg` queries listed in a dataset manifest.
pub fn load_queries(root: &Path, fov_deg: f64) -> Result<Vec<Query>> {
    synth::read_manifest(root)?
        .into_iter()
        .filter(|m| m.fov == fov_deg)
        .map(|m| {
            Ok(Query {
                id: m.id,
                truth_id: m.id,
                truth_azimuth_deg: m.azimuth_deg,
                truth_xy: (m.x_m, m.y_m),
                image: load_png(synth::pano_path(root, m.id, fov_deg))?,
            })
        })
        .collect()
}

/// Ranks the database for every query; output order follows `queries`.
pub fn coarse_queries(
    db: &DescriptorDb,
    queries: &[Query],
    dc: &DescriptorConfig,
    fov_deg: f64,
    tie: TieBreak,
) -> Result<Vec<RetrievalResult>> {
    queries
        .par_iter()
        .map(|q| {
            let g = ground_descriptor::<f32>(&q.image, fov_deg, dc)?;
            Ok(RetrievalResult {
                query_id: q.id,
                truth_id: q.truth_id,
                truth_azimuth_deg: q.truth_azimuth_deg,
                truth_xy: q.truth_xy,
                ranked: db.rank(&g, fov_deg, tie)?,
            })
        })
        .collect()
}
