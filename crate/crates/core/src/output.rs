//! Output artifacts: trajectory CSVs and JSON reports.
//!
//! CSVs are streamable and carry a `#`-prefixed metadata line before the
//! header; JSON reports wrap the payload in an envelope with the same
//! metadata. Every artifact embeds the config hash, the schema version, and
//! the scheme constants that produced it.

use crate::config::ResolvedConfig;
use crate::diffusion::DiffusionSnapshot;
use crate::dual::DualSnapshot;
use crate::particle::ParticleSnapshot;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Metadata stamped on every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct OutputMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub dt: f64,
    pub eps: f64,
    pub rho_n_max: usize,
    pub fk_clip: f64,
    pub seed: u64,
    pub replicates: u64,
}

impl OutputMeta {
    pub fn from_config(cfg: &ResolvedConfig) -> Self {
        Self {
            schema_version: crate::SCHEMA_VERSION,
            config_hash: format!("{:016x}", cfg.hash),
            dt: cfg.raw.engine.dt,
            eps: cfg.raw.engine.eps,
            rho_n_max: cfg.geo.rho_truncation(),
            fk_clip: cfg.raw.engine.fk_clip,
            seed: cfg.raw.run.seed,
            replicates: cfg.raw.run.replicates,
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# latbranch schema_version={} config_hash={} dt={} eps={} rho_n_max={} fk_clip={} seed={}",
            self.schema_version,
            self.config_hash,
            self.dt,
            self.eps,
            self.rho_n_max,
            self.fk_clip,
            self.seed
        )
    }
}

/// JSON envelope: metadata plus the report payload.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope<T: Serialize> {
    pub meta: OutputMeta,
    pub report: T,
}

pub fn write_json<T: Serialize>(
    path: &Path,
    meta: &OutputMeta,
    report: &T,
) -> std::io::Result<()> {
    let envelope = Envelope {
        meta: meta.clone(),
        report,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &envelope)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Particle trajectories: `replicate,time,site,type,count,mass`.
pub fn write_particle_csv(
    path: &Path,
    meta: &OutputMeta,
    eps: f64,
    trajectories: &[Vec<ParticleSnapshot>],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", meta.comment_line())?;
    writeln!(w, "replicate,time,site,type,count,mass")?;
    for (rep, snaps) in trajectories.iter().enumerate() {
        for snap in snaps {
            for ((site, ty), count) in snap.counts.iter() {
                writeln!(
                    w,
                    "{rep},{},{site},{ty},{count},{}",
                    snap.time,
                    count as f64 * eps
                )?;
            }
        }
    }
    w.flush()
}

/// Diffusion trajectories: `replicate,time,site,type,mass`.
pub fn write_diffusion_csv(
    path: &Path,
    meta: &OutputMeta,
    trajectories: &[Vec<DiffusionSnapshot>],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", meta.comment_line())?;
    writeln!(w, "replicate,time,site,type,mass")?;
    for (rep, snaps) in trajectories.iter().enumerate() {
        for snap in snaps {
            for ((site, ty), mass) in snap.x.iter() {
                writeln!(w, "{rep},{},{site},{ty},{mass}", snap.time)?;
            }
        }
    }
    w.flush()
}

/// Dual trajectories:
/// `replicate,time,site,alpha,kbar,kappa_0,...,kappa_(M-1)`.
pub fn write_dual_csv(
    path: &Path,
    meta: &OutputMeta,
    types: usize,
    trajectories: &[Vec<DualSnapshot>],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", meta.comment_line())?;
    let kappa_cols: Vec<String> = (0..types).map(|m| format!("kappa_{m}")).collect();
    writeln!(w, "replicate,time,site,alpha,kbar,{}", kappa_cols.join(","))?;
    for (rep, snaps) in trajectories.iter().enumerate() {
        for snap in snaps {
            for site in 0..snap.alpha.len() {
                let kappa_row: Vec<String> = (0..types)
                    .map(|m| snap.kappa.get(site, m).to_string())
                    .collect();
                writeln!(
                    w,
                    "{rep},{},{site},{},{},{}",
                    snap.time,
                    snap.alpha[site],
                    snap.kappa.site_total(site),
                    kappa_row.join(",")
                )?;
            }
        }
    }
    w.flush()
}

/// Generic study table: caller provides the header and preformatted rows.
pub fn write_table_csv(
    path: &Path,
    meta: &OutputMeta,
    header: &str,
    rows: &[String],
) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", meta.comment_line())?;
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()
}
