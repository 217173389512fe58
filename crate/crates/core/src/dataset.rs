//! Paired factor/observation samples and their binary container.
//!
//! Layout: the 8-byte magic `FEDATA01`, a little-endian `u64` header length,
//! the UTF-8 JSON header, then `S` and `X` as row-major little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::system::{truncated_normal, SystemKind, SystemSpec, FACTOR_BOUND};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"FEDATA01";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Generative factors, `N x n_inputs`.
    pub s: Tensor,
    /// Observations, `N x n_outputs`.
    pub x: Tensor,
    pub spec_digest: String,
    pub noise_std: f64,
    pub seed: u64,
    pub kind: SystemKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    n: usize,
    n_inputs: usize,
    n_outputs: usize,
    seed: u64,
    noise_std: f64,
    spec_digest: String,
    kind: SystemKind,
    truncation: f64,
}

/// Draw `n` rows: factors from the truncated normal, observations with noise.
pub fn sample_dataset(spec: &SystemSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return config_err("dataset needs at least one row");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Tensor::from_fn(n, spec.n_inputs, |_, _| truncated_normal(&mut rng));
    let mut x = Tensor::zeros(n, spec.n_outputs);
    for r in 0..n {
        let row = spec.evaluate(s.row(r), true, &mut rng)?;
        x.data_mut()[r * spec.n_outputs..(r + 1) * spec.n_outputs].copy_from_slice(&row);
    }
    Ok(Dataset { s, x, spec_digest: spec.digest(), noise_std: spec.noise_std, seed, kind: spec.kind })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.s.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.x.cols()
    }

    /// Whether factor labels are present (needed for supervised training).
    pub fn has_factors(&self) -> bool {
        self.s.cols() > 0 && self.s.rows() == self.x.rows()
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset { s: self.s.select_rows(idx), x: self.x.select_rows(idx), ..self.clone_meta() }
    }

    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset { s: self.s.slice_rows(0, n), x: self.x.slice_rows(0, n), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            s: Tensor::zeros(0, 0),
            x: Tensor::zeros(0, 0),
            spec_digest: self.spec_digest.clone(),
            noise_std: self.noise_std,
            seed: self.seed,
            kind: self.kind,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            n: self.len(),
            n_inputs: self.n_inputs(),
            n_outputs: self.n_outputs(),
            seed: self.seed,
            noise_std: self.noise_std,
            spec_digest: self.spec_digest.clone(),
            kind: self.kind,
            truncation: FACTOR_BOUND,
        };
        let json = serde_json::to_vec(&header)?;
        crate::io::write_atomic(path, |w| {
            w.write_all(DATASET_MAGIC)?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            crate::io::write_f64s(w, self.s.data())?;
            crate::io::write_f64s(w, self.x.data())?;
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("{}: not a dataset file (bad magic)", path.display())));
        }
        let header: Header = crate::io::read_json_header(&mut r)?;
        let s = Tensor::new(header.n, header.n_inputs, crate::io::read_f64s(&mut r, header.n * header.n_inputs)?)?;
        let x = Tensor::new(header.n, header.n_outputs, crate::io::read_f64s(&mut r, header.n * header.n_outputs)?)?;
        Ok(Dataset {
            s,
            x,
            spec_digest: header.spec_digest,
            noise_std: header.noise_std,
            seed: header.seed,
            kind: header.kind,
        })
    }

    /// Load and require that the file was generated from `spec`.
    pub fn load_for(path: &Path, spec: &SystemSpec) -> Result<Dataset> {
        let d = Self::load(path)?;
        let digest = spec.digest();
        if d.spec_digest != digest {
            return Err(Error::Format(format!(
                "{}: generated by system {} but {} was expected",
                path.display(),
                d.spec_digest,
                digest
            )));
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{build_system, SystemOptions};

    #[test]
    fn factors_are_truncated() {
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        let d = sample_dataset(&spec, 3000, 9).unwrap();
        assert!(d.s.data().iter().all(|v| v.abs() <= FACTOR_BOUND));
        assert_eq!(d.s.rows(), d.x.rows());
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        assert_eq!(sample_dataset(&spec, 200, 4).unwrap(), sample_dataset(&spec, 200, 4).unwrap());
        assert_ne!(sample_dataset(&spec, 200, 4).unwrap().x, sample_dataset(&spec, 200, 5).unwrap().x);
    }

    #[test]
    fn truncated_factor_spread() {
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let n = Normal::standard();
        let b = FACTOR_BOUND;
        let mass = n.cdf(b) - n.cdf(-b);
        let want = (1.0 - 2.0 * b * n.pdf(b) / mass).sqrt();
        assert!((want - 0.8796).abs() < 1e-3);
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        let d = sample_dataset(&spec, 10_000, 2).unwrap();
        let v = d.s.data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd - want).abs() < 0.03, "{sd} vs {want}");
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fed");
        std::fs::write(&p, b"NOTADATA\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_an_io_error() {
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fed");
        sample_dataset(&spec, 50, 1).unwrap().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Dataset::load(&p), Err(Error::Io(_))));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        let d = sample_dataset(&spec, 20, 1).unwrap().head(0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.fed");
        d.save(&p).unwrap();
        let back = Dataset::load(&p).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.n_inputs(), back.n_outputs()), (spec.n_inputs, spec.n_outputs));
        assert_eq!(back, d);
    }

    #[test]
    fn load_for_rejects_other_system() {
        let a = build_system(1, &SystemOptions::default()).unwrap();
        let b = build_system(2, &SystemOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fed");
        sample_dataset(&a, 10, 1).unwrap().save(&p).unwrap();
        assert!(Dataset::load_for(&p, &a).is_ok());
        assert!(matches!(Dataset::load_for(&p, &b), Err(Error::Format(_))));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn save_load_is_bit_exact(n in 1usize..40, seed in 0u64..1000, sys in 0u64..4) {
            let spec = build_system(sys, &SystemOptions::default()).unwrap();
            let d = sample_dataset(&spec, n, seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.fed");
            d.save(&p).unwrap();
            let back = Dataset::load(&p).unwrap();
            proptest::prop_assert_eq!(back.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                d.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            proptest::prop_assert_eq!(back, d);
        }
    }

    #[test]
    fn zero_rows_rejected() {
        let spec = build_system(1, &SystemOptions::default()).unwrap();
        assert!(sample_dataset(&spec, 0, 1).is_err());
    }
}
