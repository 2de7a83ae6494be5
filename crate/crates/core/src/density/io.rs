//! `.kde` files: a JSON header plus a little-endian `.kde.bin` bin table.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::kde::BinnedKde;
use crate::density::kernel::{KernelShape, KernelSpec};
use crate::error::{Error, Result};
use crate::features::Whitening;

const FORMAT: &str = "lucc-binned-kde";
const VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"LKDE";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    d: usize,
    h: f64,
    q: usize,
    bin_width: f64,
    kernel: KernelShape,
    n: u64,
    bounds: Vec<[f64; 2]>,
    boundary_correction: bool,
    bins: usize,
    payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    whitening: Option<Whitening>,
}

fn payload_path(header_path: &Path) -> PathBuf {
    let mut s = header_path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

/// Writes `path` (JSON header) and `path.bin` (bin table).
pub fn save_kde(path: &Path, kde: &BinnedKde, whitening: Option<&Whitening>) -> Result<()> {
    let bin_path = payload_path(path);
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        d: kde.dims(),
        h: kde.bandwidth(),
        q: kde.q(),
        bin_width: kde.bin_width(),
        kernel: kde.kernel().shape,
        n: kde.n(),
        bounds: kde.bounds().to_vec(),
        boundary_correction: kde.boundary_correction(),
        bins: kde.bin_count(),
        payload: bin_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        whitening: whitening.cloned(),
    };
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &header)?;

    let f = File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut w = BufWriter::new(f);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(&bin_path, e));
    put(MAGIC)?;
    put(&(kde.dims() as u32).to_le_bytes())?;
    put(&(kde.bin_count() as u64).to_le_bytes())?;
    for (key, count) in kde.bins() {
        for k in key {
            put(&k.to_le_bytes())?;
        }
        put(&count.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(&bin_path, e))
}

/// Reads an estimator and the whitening transform stored with it, if any.
pub fn load_kde(path: &Path) -> Result<(BinnedKde, Option<Whitening>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_reader(BufReader::new(f))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            header.format,
            header.version
        )));
    }
    let bin_path = path
        .parent()
        .unwrap_or_else(|| Path::new(""))
        .join(&header.payload);
    let f = File::open(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let mut r = BufReader::new(f);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(&bin_path, e))?;

    let bad = |msg: &str| Error::Format(format!("{}: {msg}", bin_path.display()));
    if buf.len() < 16 || &buf[..4] != MAGIC {
        return Err(bad("missing header"));
    }
    let d = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let nbins = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    if d != header.d || nbins != header.bins {
        return Err(bad("payload does not match header"));
    }
    let record = 4 * d + 4;
    if buf.len() != 16 + nbins * record {
        return Err(bad("truncated bin table"));
    }
    let word = |off: usize| buf[off..off + 4].try_into().unwrap();
    let bins = (0..nbins)
        .map(|b| {
            let base = 16 + b * record;
            let key = (0..d).map(|k| i32::from_le_bytes(word(base + 4 * k))).collect();
            (key, u32::from_le_bytes(word(base + 4 * d)))
        })
        .collect();
    let kernel = KernelSpec::new(header.kernel, d)?;
    let kde = BinnedKde::from_parts(
        header.h,
        header.q,
        kernel,
        header.bounds,
        bins,
        header.boundary_correction,
    )?;
    if kde.n() != header.n {
        return Err(bad("bin counts do not sum to n"));
    }
    if let Some(w) = &header.whitening {
        if w.dims() != d {
            return Err(Error::Format("whitening dimension does not match".into()));
        }
    }
    Ok((kde, header.whitening))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kde::fit_binned_kde;

    #[test]
    fn round_trip_preserves_estimates() {
        let dir = tempfile::tempdir().unwrap();
        let pts: Vec<f64> = (0..600).map(|i| ((i * 37) % 101) as f64 / 17.0).collect();
        let kde = fit_binned_kde(&pts, 3, 0.8, 7, KernelSpec::boxed(3)).unwrap();
        let w = Whitening::identity(3);
        let path = dir.path().join("m.kde");
        save_kde(&path, &kde, Some(&w)).unwrap();
        let (back, wb) = load_kde(&path).unwrap();
        assert_eq!(back, kde);
        assert_eq!(wb, Some(w));
        let y = [2.0, 3.0, 1.0];
        assert_eq!(back.estimate(&y).unwrap(), kde.estimate(&y).unwrap());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let kde = fit_binned_kde(&[0.0, 1.0, 2.0], 1, 1.0, 3, KernelSpec::boxed(1)).unwrap();
        let path = dir.path().join("t.kde");
        save_kde(&path, &kde, None).unwrap();
        let bin = payload_path(&path);
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_kde(&path), Err(Error::Format(_))));
    }
}
