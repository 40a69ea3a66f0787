//! 8-bit binary PGM images and line-oriented episode manifests.
//!
//! Manifest lines read
//! `episode <id> class <c> support <image> <mask> query <image> <mask>`;
//! relative paths resolve against the manifest's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{BroError, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

use super::Episode;

/// Encodes an image with values in `[0, 1]` as P5 with maxval 255.
pub fn encode_pgm(image: &Tensor) -> Vec<u8> {
    let (h, w) = image.dims2().expect("PGM needs an H×W image");
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let (h, w) = mask.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.as_slice().iter().map(|&v| if v { 255u8 } else { 0 }));
    out
}

/// Parses a P5 image into `[0, 1]` intensities.
pub fn decode_pgm(bytes: &[u8], origin: &Path) -> Result<Tensor> {
    let bad = |r: &str| BroError::format(origin, r);
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token()?.parse().map_err(|_| bad(&format!("bad {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(bad("unsupported dimensions or maxval"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = pos + 1;
    let raster = bytes
        .get(data_start..data_start + w * h)
        .ok_or_else(|| bad("truncated raster"))?;
    Tensor::new(
        vec![h, w],
        raster.iter().map(|&b| b as f64 / maxval as f64).collect(),
    )
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| BroError::io(path, e))?;
    decode_pgm(&bytes, path)
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let img = read_pgm(path)?;
    let (h, w) = img.dims2()?;
    BinaryMask::new(h, w, img.data().iter().map(|&v| v >= 0.5).collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| BroError::io(path, e))
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    write_file(path, &encode_pgm(image))
}

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_file(path, &encode_mask_pgm(mask))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub class_id: u32,
    pub support_image: PathBuf,
    pub support_mask: PathBuf,
    pub query_image: PathBuf,
    pub query_mask: PathBuf,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!(
            "episode {} class {} support {} {} query {} {}",
            self.id,
            self.class_id,
            self.support_image.display(),
            self.support_mask.display(),
            self.query_image.display(),
            self.query_mask.display()
        )
    }
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let base = origin.parent().unwrap_or(Path::new("."));
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(n, line)| {
            let t: Vec<&str> = line.split_whitespace().collect();
            let shape_ok = t.len() == 10
                && t[0] == "episode"
                && t[2] == "class"
                && t[4] == "support"
                && t[7] == "query";
            if !shape_ok {
                return Err(BroError::format(origin, format!("line {}: malformed episode line", n + 1)));
            }
            let class_id = t[3]
                .parse()
                .map_err(|_| BroError::format(origin, format!("line {}: bad class id", n + 1)))?;
            Ok(ManifestEntry {
                id: t[1].to_string(),
                class_id,
                support_image: resolve(t[5]),
                support_mask: resolve(t[6]),
                query_image: resolve(t[8]),
                query_mask: resolve(t[9]),
            })
        })
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| BroError::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn load_episode(entry: &ManifestEntry) -> Result<Episode> {
    Ok(Episode {
        support_image: read_pgm(&entry.support_image)?,
        support_mask: read_mask_pgm(&entry.support_mask)?,
        query_image: read_pgm(&entry.query_image)?,
        query_mask: read_mask_pgm(&entry.query_mask)?,
        class_id: entry.class_id,
    })
}

/// Writes every episode as four PGMs plus `manifest.txt` into `dir`.
pub fn write_episode_set(dir: &Path, episodes: &[Episode]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| BroError::io(dir, e))?;
    let mut manifest = String::new();
    for (i, ep) in episodes.iter().enumerate() {
        let id = format!("ep{i:04}");
        let names = [
            format!("{id}_support.pgm"),
            format!("{id}_support_mask.pgm"),
            format!("{id}_query.pgm"),
            format!("{id}_query_mask.pgm"),
        ];
        write_pgm(&dir.join(&names[0]), &ep.support_image)?;
        write_mask_pgm(&dir.join(&names[1]), &ep.support_mask)?;
        write_pgm(&dir.join(&names[2]), &ep.query_image)?;
        write_mask_pgm(&dir.join(&names[3]), &ep.query_mask)?;
        let entry = ManifestEntry {
            id,
            class_id: ep.class_id,
            support_image: names[0].clone().into(),
            support_mask: names[1].clone().into(),
            query_image: names[2].clone().into(),
            query_mask: names[3].clone().into(),
        };
        let _ = writeln!(manifest, "{}", entry.to_line());
    }
    let path = dir.join("manifest.txt");
    write_file(&path, manifest.as_bytes())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_quantized() {
        let img = Tensor::new(vec![2, 3], vec![0.0, 0.2, 0.5, 0.7, 1.0, 0.33]).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        let back = decode_pgm(&bytes, Path::new("mem")).unwrap();
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
        assert_eq!(decode_pgm(&encode_pgm(&back), Path::new("mem")).unwrap(), back);
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let t = decode_pgm(&bytes, Path::new("mem")).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        assert!(decode_pgm(b"P2\n1 1\n255\n0", Path::new("mem")).is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00", Path::new("mem")).is_err());
    }

    #[test]
    fn manifest_line_format() {
        let text = "episode ep0 class 3 support a.pgm am.pgm query b.pgm bm.pgm\n\n";
        let entries = parse_manifest(text, Path::new("/data/set/manifest.txt")).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].class_id, 3);
        assert_eq!(entries[0].query_mask, PathBuf::from("/data/set/bm.pgm"));
        assert!(parse_manifest("episode ep0 class x", Path::new("m")).is_err());
    }
}
