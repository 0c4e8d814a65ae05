//! Binary field checkpoints and trajectory manifests.
//!
//! Field files are little-endian: magic "RDTF", version u32, n u32, N u32,
//! L f64, kind tag u32, time f64, then the node-major f64 payload.  A
//! trajectory is a JSON manifest naming one field file per stored slice.

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::lattice::{Field, Lattice};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"RDTF";
const VERSION: u32 = 1;

/// Field payload layout tag stored in the checkpoint header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
    Sym2,
    Sym2Grad,
}

impl FieldKind {
    fn tag(self) -> u32 {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => 2,
            FieldKind::Sym2 => 3,
            FieldKind::Sym2Grad => 4,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        Ok(match tag {
            1 => FieldKind::Scalar,
            2 => FieldKind::Vector,
            3 => FieldKind::Sym2,
            4 => FieldKind::Sym2Grad,
            _ => {
                return Err(Error::CheckpointFormat {
                    reason: format!("unknown field kind tag {tag}"),
                })
            }
        })
    }

    fn comps(self, n: usize) -> usize {
        let nc = n * (n + 1) / 2;
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vector => n,
            FieldKind::Sym2 => nc,
            FieldKind::Sym2Grad => n * nc,
        }
    }

    /// Infer the layout from a component count (unambiguous for n in 2..=4).
    pub fn infer(n: usize, comps: usize) -> Result<Self> {
        for kind in [
            FieldKind::Scalar,
            FieldKind::Vector,
            FieldKind::Sym2,
            FieldKind::Sym2Grad,
        ] {
            if kind.comps(n) == comps {
                return Ok(kind);
            }
        }
        Err(Error::invalid(
            "checkpoint",
            format!("no field kind has {comps} components in dimension {n}"),
        ))
    }
}

/// Write one field slice with its time stamp.
pub fn write_field(path: &Path, f: &Field, time: f64) -> Result<()> {
    let lat = f.lat();
    let kind = FieldKind::infer(lat.n(), f.comps())?;
    let mut buf = Vec::with_capacity(36 + 8 * f.data().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(lat.n() as u32).to_le_bytes());
    buf.extend_from_slice(&(lat.res() as u32).to_le_bytes());
    buf.extend_from_slice(&lat.extent().to_le_bytes());
    buf.extend_from_slice(&kind.tag().to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for &x in f.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read one field slice; returns the field, its time stamp, and layout.
pub fn read_field(path: &Path) -> Result<(Field, f64, FieldKind)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_field(&bytes)
}

fn parse_field(bytes: &[u8]) -> Result<(Field, f64, FieldKind)> {
    let fail = |reason: &str| Error::CheckpointFormat {
        reason: reason.to_string(),
    };
    if bytes.len() < 36 {
        return Err(fail("file shorter than the fixed header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let n = u32_at(8) as usize;
    let res = u32_at(12) as usize;
    let extent = f64_at(16);
    let kind = FieldKind::from_tag(u32_at(24))?;
    let time = f64_at(28);
    let lat = Lattice::new(n, res, extent)?;
    let comps = kind.comps(n);
    let expect = 36 + 8 * lat.nodes() * comps;
    if bytes.len() != expect {
        return Err(fail(&format!(
            "payload size {} does not match expected {}",
            bytes.len(),
            expect
        )));
    }
    let mut f = Field::zeros(lat, comps);
    for (k, x) in f.data_mut().iter_mut().enumerate() {
        *x = f64_at(36 + 8 * k);
    }
    if !time.is_finite() {
        return Err(fail("non-finite time stamp"));
    }
    Ok((f, time, kind))
}

#[derive(Serialize, Deserialize)]
struct ManifestLattice {
    n: usize,
    res: usize,
    extent: f64,
}

/// JSON manifest listing the stored slices of a trajectory.
#[derive(Serialize, Deserialize)]
pub struct TrajectoryManifest {
    lattice: ManifestLattice,
    times: Vec<f64>,
    slice_files: Vec<String>,
    steps: usize,
    /// Marching step of the generating run; absent in older manifests,
    /// where the first stored gap stands in.
    #[serde(default)]
    dt0: Option<f64>,
}

/// Write a trajectory as a manifest plus one field file per stored slice.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let lat = traj.lat();
    let mut slice_files = Vec::new();
    for k in 0..traj.len() {
        let name = format!("slice_{k:04}.rdtf");
        write_field(&dir.join(&name), traj.slice(k), traj.times()[k])?;
        slice_files.push(name);
    }
    let manifest = TrajectoryManifest {
        lattice: ManifestLattice {
            n: lat.n(),
            res: lat.res(),
            extent: lat.extent(),
        },
        times: traj.times().to_vec(),
        slice_files,
        steps: traj.steps,
        dt0: Some(traj.dt0),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text)?;
    Ok(path)
}

/// Load a trajectory from its manifest file.
pub fn read_trajectory(manifest_path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: TrajectoryManifest = serde_json::from_str(&text)?;
    let lat = Lattice::new(
        manifest.lattice.n,
        manifest.lattice.res,
        manifest.lattice.extent,
    )?;
    if manifest.times.len() != manifest.slice_files.len() {
        return Err(Error::CheckpointFormat {
            reason: "manifest times and slice_files lengths differ".to_string(),
        });
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut slices = Vec::new();
    for (k, name) in manifest.slice_files.iter().enumerate() {
        let (f, time, _) = read_field(&dir.join(name))?;
        if f.lat() != lat {
            return Err(Error::LatticeMismatch {
                expected: format!("{:?}", lat),
                got: format!("{:?}", f.lat()),
            });
        }
        if (time - manifest.times[k]).abs() > 1e-12 * (1.0 + time.abs()) {
            return Err(Error::CheckpointFormat {
                reason: format!(
                    "slice {k} time stamp {time} disagrees with manifest {}",
                    manifest.times[k]
                ),
            });
        }
        slices.push(f);
    }
    let mut traj = Trajectory::from_slices(lat, manifest.times, slices)?;
    traj.steps = manifest.steps;
    if let Some(dt0) = manifest.dt0 {
        if dt0.is_finite() && dt0 > 0.0 {
            traj.dt0 = dt0;
        }
    }
    Ok(traj)
}
