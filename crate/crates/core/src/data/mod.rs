//! Data pipeline: synthetic forgery generation, preprocessing, and the
//! dataset directory layout.
//!
//! A dataset directory holds, per sample id:
//!   `<id>.rgb.ppm`, `<id>.edge.pgm`, `<id>.depth.pgm`, `<id>.mask.pgm`
//! plus `manifest.txt` with one id per line in evaluation order.

pub mod pnm;
pub mod preprocess;
pub mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Domain, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor};

pub use synth::{synth_sample, SynthOutput, SynthSpec};

/// One training example, already at model resolution with unit-range
/// planes and a strictly binary mask.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor,
    pub edge: Tensor,
    pub depth: Tensor,
    pub mask: Tensor,
}

impl Sample {
    pub fn domain_tensor(&self, domain: Domain) -> &Tensor {
        match domain {
            Domain::Rgb => &self.rgb,
            Domain::Edge => &self.edge,
            Domain::Depth => &self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = |c: usize| Dims::new(1, c, IMAGE_SIZE, IMAGE_SIZE);
        for (name, t, c) in [
            ("rgb", &self.rgb, 3),
            ("edge", &self.edge, 1),
            ("depth", &self.depth, 1),
            ("mask", &self.mask, 1),
        ] {
            if t.dims() != want(c) {
                return Err(Error::Data(format!(
                    "sample {}: {name} dims {} want {}",
                    self.id,
                    t.dims(),
                    want(c)
                )));
            }
            if !t.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
                return Err(Error::Data(format!("sample {}: {name} out of [0,1]", self.id)));
            }
        }
        if !self.mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Data(format!("sample {}: mask is not binary", self.id)));
        }
        Ok(())
    }
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.txt")
}

pub fn read_manifest(dir: &Path) -> Result<Vec<String>> {
    let path = manifest_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

pub fn write_manifest(dir: &Path, ids: &[String]) -> Result<()> {
    let path = manifest_path(dir);
    let mut text = ids.join("\n");
    if !ids.is_empty() {
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_synth(dir: &Path, out: &SynthOutput) -> Result<()> {
    let d = out.rgb.dims();
    let (h, w) = (d.h(), d.w());
    let mut rgb_bytes = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            rgb_bytes[3 * p + c] = (out.rgb.data()[c * h * w + p] * 255.0).round() as u8;
        }
    }
    pnm::save_rgb8(&dir.join(format!("{}.rgb.ppm", out.id)), w, h, &rgb_bytes)?;
    pnm::save_gray8(
        &dir.join(format!("{}.edge.pgm", out.id)),
        w,
        h,
        &preprocess::to_bytes8(&out.edge),
    )?;
    pnm::save_gray8(
        &dir.join(format!("{}.depth.pgm", out.id)),
        w,
        h,
        &preprocess::to_bytes8(&out.depth),
    )?;
    pnm::save_binary_mask(&dir.join(format!("{}.mask.pgm", out.id)), &out.mask)
}

/// Generate `spec.count` samples into `dir` and write the manifest.
pub fn synth_dataset(dir: &Path, spec: &SynthSpec) -> Result<Vec<String>> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outputs: Vec<Result<String>> = (0..spec.count)
        .into_par_iter()
        .map(|index| {
            let out = synth_sample(spec, index)?;
            write_synth(dir, &out)?;
            Ok(out.id)
        })
        .collect();
    let ids = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    write_manifest(dir, &ids)?;
    Ok(ids)
}

fn load_plane(dir: &Path, id: &str, kind: &str) -> Result<Tensor> {
    let path = dir.join(format!("{id}.{kind}"));
    Ok(pnm::load(&path)?.to_tensor())
}

/// Load one sample by id, resizing to model resolution when needed. Masks
/// loaded at native resolution must be strictly {0, 255}; resized masks are
/// re-binarized at 0.5.
pub fn load_sample(dir: &Path, id: &str) -> Result<Sample> {
    let rgb = load_plane(dir, id, "rgb.ppm")?;
    if rgb.dims().c() != 3 {
        return Err(Error::Data(format!("sample {id}: rgb file is not color")));
    }
    let edge = load_plane(dir, id, "edge.pgm")?;
    let depth = load_plane(dir, id, "depth.pgm")?;
    let mask_raw = load_plane(dir, id, "mask.pgm")?;

    let native = mask_raw.dims().h() == IMAGE_SIZE && mask_raw.dims().w() == IMAGE_SIZE;
    let mask = if native {
        if !mask_raw.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Data(format!("sample {id}: mask values must be 0 or 255")));
        }
        mask_raw
    } else {
        let resized = preprocess::resize_normalize(&mask_raw)?;
        Tensor::new(
            resized.dims(),
            resized.data().iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
        )?
    };

    let sample = Sample {
        id: id.to_string(),
        rgb: preprocess::resize_normalize(&rgb)?,
        edge: preprocess::resize_normalize(&edge)?,
        depth: preprocess::resize_normalize(&depth)?,
        mask,
    };
    sample.validate()?;
    Ok(sample)
}

/// Load every manifest entry, in manifest order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let ids = read_manifest(dir)?;
    ids.par_iter().map(|id| load_sample(dir, id)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::new(3, 5);
        let ids = synth_dataset(dir.path(), &spec).unwrap();
        assert_eq!(ids.len(), 3);
        assert_eq!(read_manifest(dir.path()).unwrap(), ids);

        let samples = load_dataset(dir.path()).unwrap();
        assert_eq!(samples.len(), 3);
        for (s, id) in samples.iter().zip(&ids) {
            assert_eq!(&s.id, id);
            s.validate().unwrap();
        }
        // The quantized in-memory planes equal the reloaded ones exactly.
        let fresh = synth_sample(&spec, 0).unwrap();
        assert_eq!(samples[0].rgb.data(), fresh.rgb.data());
        assert_eq!(samples[0].mask.data(), fresh.mask.data());
    }

    #[test]
    fn same_seed_identical_tree() {
        let spec = SynthSpec::new(2, 9);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_dataset(d1.path(), &spec).unwrap();
        synth_dataset(d2.path(), &spec).unwrap();
        for entry in std::fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?} differs");
        }
    }

    #[test]
    fn loader_resizes_foreign_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { size: 128, ..SynthSpec::new(1, 3) };
        synth_dataset(dir.path(), &spec).unwrap();
        let samples = load_dataset(dir.path()).unwrap();
        assert_eq!(samples[0].rgb.dims(), Dims::new(1, 3, IMAGE_SIZE, IMAGE_SIZE));
        samples[0].validate().unwrap();
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        write_manifest(dir.path(), &["ghost".to_string()]).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
