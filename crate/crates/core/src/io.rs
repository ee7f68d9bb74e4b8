//! File formats: 16-bit binary PGM with key=value sidecars, CSV tables,
//! 32-bit float grids, and SHA-256 content manifests.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::patterns::{MasterMask, PatternSet};
use crate::recon::ReconImage;

// ---------------------------------------------------------------------------
// 16-bit PGM

/// Write transmission values in [0,1] as binary PGM (P5), maxval 65535,
/// samples stored most significant byte first.
pub fn write_pgm16(path: &Path, values: &Array2<f64>) -> Result<()> {
    let (h, w) = values.dim();
    let mut buf = Vec::with_capacity(32 + 2 * h * w);
    buf.extend_from_slice(format!("P5\n{w} {h}\n65535\n").as_bytes());
    for v in values.iter() {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Range("PGM output requires values in [0,1]".into()));
        }
        let q = (v * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pgm16(path: &Path) -> Result<Array2<f64>> {
    let data = fs::read(path)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and '#' comments
        while pos < data.len() {
            let c = data[pos];
            if c == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let w: usize = token()?.parse().map_err(|_| Error::Format("bad PGM width".into()))?;
    let h: usize = token()?.parse().map_err(|_| Error::Format("bad PGM height".into()))?;
    let maxval: usize = token()?.parse().map_err(|_| Error::Format("bad PGM maxval".into()))?;
    if maxval != 65535 {
        return Err(Error::Format(format!("expected maxval 65535, found {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    if data.len() < pos + 2 * w * h {
        return Err(Error::Format("truncated PGM data".into()));
    }
    let mut out = Array2::zeros((h, w));
    for (i, v) in out.iter_mut().enumerate() {
        let hi = data[pos + 2 * i] as u16;
        let lo = data[pos + 2 * i + 1] as u16;
        *v = ((hi << 8) | lo) as f64 / 65535.0;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Sidecars

/// key=value lines, one per entry.
pub fn write_sidecar(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                return Err(Error::Config {
                    line: i + 1,
                    message: format!("expected key=value, found {line:?}"),
                })
            }
        }
    }
    Ok(out)
}

/// Mask PGM plus sidecar describing its provenance. `stem` gets ".pgm" and
/// ".txt" suffixes.
pub fn write_mask(stem: &Path, mask: &MasterMask) -> Result<()> {
    write_pgm16(&stem.with_extension("pgm"), &mask.values)?;
    write_sidecar(
        &stem.with_extension("txt"),
        &[
            ("kind", mask.params.kind.name().to_string()),
            ("params", mask.params.describe()),
            ("seed", mask.seed.to_string()),
            ("dims", format!("{}x{}", mask.width, mask.height)),
            ("periodic", mask.periodic.to_string()),
        ],
    )
}

/// Pattern stack: one PGM per pattern plus an index file listing file name
/// and offset per line.
pub fn write_pattern_stack(dir: &Path, set: &PatternSet) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = String::new();
    index.push_str(&format!("# source={}\n", set.source));
    for (j, pat) in set.patterns.iter().enumerate() {
        let name = format!("pattern_{j:05}.pgm");
        write_pgm16(&dir.join(&name), pat)?;
        let (x, y) = set.offsets[j];
        index.push_str(&format!("{name},{x},{y}\n"));
    }
    fs::write(dir.join("index.txt"), index)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// CSV

/// CSV with '#'-prefixed comment, comma separator, '.' decimal.
pub fn write_csv(path: &Path, comment: &str, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# {comment}\n"));
    out.push_str(&format!("# {}\n", columns.join(",")));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// gnuplot-friendly two-column variant.
pub fn write_xy(path: &Path, comment: &str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension("x and y lengths differ".into()));
    }
    let mut out = String::new();
    out.push_str(&format!("# {comment}\n"));
    for (a, b) in x.iter().zip(y.iter()) {
        out.push_str(&format!("{a} {b}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Float grid (reconstructions)

/// 32-bit float binary grid with a text header.
pub fn write_grid(path: &Path, img: &ReconImage) -> Result<()> {
    let (h, w) = img.values.dim();
    let mut buf = Vec::with_capacity(128 + 4 * h * w);
    buf.extend_from_slice(
        format!(
            "ghostmask-grid 1\nwidth {w}\nheight {h}\nmethod {}\nscale {}\ndata\n",
            img.method, img.scale
        )
        .as_bytes(),
    );
    for v in img.values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<ReconImage> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    // header ends at the line after "data"
    let header_end = data
        .windows(5)
        .position(|w| w == b"data\n")
        .ok_or_else(|| Error::Format("missing grid data marker".into()))?
        + 5;
    let header = String::from_utf8_lossy(&data[..header_end]);
    let mut width = 0usize;
    let mut height = 0usize;
    let mut method = String::new();
    let mut scale = 1usize;
    for line in header.lines() {
        if let Some(v) = line.strip_prefix("width ") {
            width = v.parse().map_err(|_| Error::Format("bad grid width".into()))?;
        } else if let Some(v) = line.strip_prefix("height ") {
            height = v.parse().map_err(|_| Error::Format("bad grid height".into()))?;
        } else if let Some(v) = line.strip_prefix("method ") {
            method = v.to_string();
        } else if let Some(v) = line.strip_prefix("scale ") {
            scale = v.parse().map_err(|_| Error::Format("bad grid scale".into()))?;
        }
    }
    if data.len() < header_end + 4 * width * height {
        return Err(Error::Format("truncated grid data".into()));
    }
    let mut values = Array2::zeros((height, width));
    for (i, v) in values.iter_mut().enumerate() {
        let off = header_end + 4 * i;
        *v = f32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as f64;
    }
    Ok(ReconImage { values, method, scale })
}

/// Min-max normalized 16-bit PGM for viewing a reconstruction.
pub fn write_grid_preview(path: &Path, img: &ReconImage) -> Result<()> {
    let min = img.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = img.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let norm = img.values.mapv(|v| (v - min) / span);
    write_pgm16(path, &norm)
}

// ---------------------------------------------------------------------------
// Manifest

/// SHA-256 hex digest of a file's contents.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = fs::File::open(path)?;
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, base, out)?;
        } else {
            out.push(path.strip_prefix(base).unwrap().to_path_buf());
        }
    }
    Ok(())
}

/// Write `manifest.txt` in `dir` listing every file (recursively, sorted)
/// with its SHA-256 content hash. The manifest itself is excluded.
pub fn write_manifest(dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.retain(|p| p != Path::new("manifest.txt"));
    files.sort();
    let mut f = fs::File::create(dir.join("manifest.txt"))?;
    for rel in &files {
        let hash = file_hash(&dir.join(rel))?;
        writeln!(f, "{hash}  {}", rel.display())?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let file = fs::File::open(dir.join("manifest.txt"))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Some((hash, rel)) = line.split_once("  ") {
            out.push((hash.to_string(), rel.to_string()));
        }
    }
    Ok(out)
}
