//! Bit-exact binary I/O: flat little-endian `f64` stacks with JSON sidecars,
//! and the data-cube directory layout (manifest + per-frame binaries).

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ChannelStack, DataCube, DataFrame};

#[derive(Debug, Serialize, Deserialize)]
struct StackSidecar {
    height: usize,
    width: usize,
    channels: usize,
    order: String,
    dtype: String,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_f64_file(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

fn read_f64_file(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{} has {} bytes, not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes a stack as `<path>` (flat little-endian f64, channel-major,
/// row-major planes) plus a `.json` sidecar describing the shape.
pub fn write_stack(stack: &ChannelStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_f64_file(path, stack.to_flat().into_iter())?;
    let sidecar = StackSidecar {
        height: stack.height(),
        width: stack.width(),
        channels: stack.channels(),
        order: "row-major".into(),
        dtype: "f64le".into(),
    };
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serialization");
    fs::write(sidecar_path(path), json).map_err(|e| Error::io(sidecar_path(path), e))
}

/// Inverse of `write_stack`; errors when the sidecar and binary disagree.
pub fn read_stack(path: impl AsRef<Path>) -> Result<ChannelStack> {
    let path = path.as_ref();
    let sidecar_file = sidecar_path(path);
    let text = fs::read_to_string(&sidecar_file).map_err(|e| Error::io(&sidecar_file, e))?;
    let sidecar: StackSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad sidecar {}: {e}", sidecar_file.display())))?;
    if sidecar.dtype != "f64le" || sidecar.order != "row-major" {
        return Err(Error::Format(format!(
            "unsupported layout in {}: order={}, dtype={}",
            sidecar_file.display(),
            sidecar.order,
            sidecar.dtype
        )));
    }
    let values = read_f64_file(path)?;
    let expected = sidecar.channels * sidecar.height * sidecar.width;
    if values.len() != expected {
        return Err(Error::Format(format!(
            "{}: sidecar claims {} values but binary holds {}",
            path.display(),
            expected,
            values.len()
        )));
    }
    ChannelStack::from_flat(sidecar.channels, sidecar.height, sidecar.width, &values)
}

#[derive(Debug, Serialize, Deserialize)]
struct CubeManifest {
    k: usize,
    height: usize,
    width: usize,
    readout_variance: f64,
    seed: u64,
    psf: String,
    schedule: Vec<(Vec<f64>, Vec<f64>)>,
}

fn frame_name(idx: usize) -> String {
    format!("frame_{idx:04}.f64")
}

fn weights_name(idx: usize) -> String {
    format!("weights_{idx:04}.f64")
}

/// Serializes a cube as a directory: `manifest.json`, `psf.f64` (+ sidecar),
/// and per-frame `frame_####.f64` / `weights_####.f64` binaries.
pub fn save_cube(cube: &DataCube, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = CubeManifest {
        k: cube.frame_count(),
        height: cube.height(),
        width: cube.width(),
        readout_variance: cube.readout_variance(),
        seed: cube.seed(),
        psf: "psf.f64".into(),
        schedule: cube.schedule(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    let psf_stack = ChannelStack::new(vec![cube.psf_plane().clone()])?;
    write_stack(&psf_stack, dir.join("psf.f64"))?;
    for (idx, frame) in cube.frames().iter().enumerate() {
        write_f64_file(&dir.join(frame_name(idx)), frame.data.iter().copied())?;
        write_f64_file(&dir.join(weights_name(idx)), frame.weights.iter().copied())?;
    }
    Ok(())
}

/// Loads a cube directory written by `save_cube`.
pub fn load_cube(dir: impl AsRef<Path>) -> Result<DataCube> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CubeManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("bad manifest {}: {e}", manifest_path.display())))?;
    if manifest.schedule.len() != manifest.k {
        return Err(Error::Format(format!(
            "manifest lists {} schedule entries for k = {}",
            manifest.schedule.len(),
            manifest.k
        )));
    }
    let psf_stack = read_stack(dir.join(&manifest.psf))?;
    if psf_stack.channels() != 1
        || psf_stack.height() != manifest.height
        || psf_stack.width() != manifest.width
    {
        return Err(Error::Format("psf file shape disagrees with manifest".into()));
    }
    let n = manifest.height * manifest.width;
    let mut frames = Vec::with_capacity(manifest.k);
    for (idx, (v1, v2)) in manifest.schedule.iter().enumerate() {
        let data = read_f64_file(&dir.join(frame_name(idx)))?;
        let weights = read_f64_file(&dir.join(weights_name(idx)))?;
        if data.len() != 2 * n || weights.len() != 2 * n {
            return Err(Error::Format(format!(
                "frame {idx} length mismatch: data {} / weights {} vs 2N = {}",
                data.len(),
                weights.len(),
                2 * n
            )));
        }
        frames.push(DataFrame::new(
            Array1::from_vec(data),
            Array1::from_vec(weights),
            v1.clone(),
            v2.clone(),
        )?);
    }
    DataCube::new(
        frames,
        psf_stack.plane(0).clone(),
        manifest.readout_variance,
        manifest.seed,
    )
}

/// Channel file names for 3-channel stacks; index names otherwise.
pub fn channel_names(channels: usize) -> Vec<String> {
    if channels == 3 {
        vec!["I".into(), "Q".into(), "U".into()]
    } else {
        (0..channels).map(|l| format!("c{l}")).collect()
    }
}

/// Writes each channel of a stack as `<prefix>_<name>.f64` (+ sidecar) in
/// `dir`.
pub fn write_stack_channels(stack: &ChannelStack, dir: impl AsRef<Path>, prefix: &str) -> Result<()> {
    let dir = dir.as_ref();
    for (l, name) in channel_names(stack.channels()).iter().enumerate() {
        let single = ChannelStack::new(vec![stack.plane(l).clone()])?;
        write_stack(&single, dir.join(format!("{prefix}_{name}.f64")))?;
    }
    Ok(())
}

/// Reads a stack from either a single `.f64` file or a directory holding
/// per-channel `<prefix>_{I,Q,U}.f64` files for one of the known prefixes.
pub fn load_stack_auto(path: impl AsRef<Path>) -> Result<ChannelStack> {
    let path = path.as_ref();
    if path.is_file() {
        return read_stack(path);
    }
    if path.is_dir() {
        for prefix in ["truth", "recon"] {
            let candidates: Vec<PathBuf> = channel_names(3)
                .iter()
                .map(|name| path.join(format!("{prefix}_{name}.f64")))
                .collect();
            if candidates.iter().all(|p| p.is_file()) {
                let mut planes = Vec::new();
                for p in &candidates {
                    let s = read_stack(p)?;
                    if s.channels() != 1 {
                        return Err(Error::Format(format!(
                            "{} holds {} channels, expected 1",
                            p.display(),
                            s.channels()
                        )));
                    }
                    planes.push(s.plane(0).clone());
                }
                return ChannelStack::new(planes);
            }
        }
        return Err(Error::Format(format!(
            "{} contains no per-channel stack files",
            path.display()
        )));
    }
    Err(Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
    ))
}
