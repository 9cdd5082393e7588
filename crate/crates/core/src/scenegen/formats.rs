//! On-disk formats of the dataset and predictions.
//!
//! * PPM: binary `P6`, maxval 255.
//! * SSDM: `"SSDM"`, u32 width, u32 height, u8 dtype (1 = f32), 3 pad
//!   bytes, then little-endian f32 values row by row.
//! * SSBM: `"SSBM"`, u32 width, u32 height, then each row packed into
//!   `ceil(width / 8)` bytes, least significant bit first.
//! * SSVX: `"SSVX"`, u32 R, then `R³` bits in x-fastest order, packed
//!   least significant bit first.
//! * PLY: ASCII, one `x y z` vertex per line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::image::{Map, RgbImage};
use super::sample::PointCloud;
use super::voxel::VoxelGrid;
use crate::{Error, Result};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn u32_at(b: &[u8], at: usize, kind: &'static str) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::format(kind, "truncated header"))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    // four whitespace-separated header tokens, comments allowed
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format("ppm", "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if tokens[0] != "P6" {
        return Err(Error::format("ppm", format!("unsupported magic {}", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format("ppm", format!("bad number `{s}`")));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::format("ppm", format!("maxval {maxval} unsupported")));
    }
    let data = bytes
        .get(i..)
        .filter(|d| d.len() == w * h * 3)
        .ok_or_else(|| Error::format("ppm", "pixel data has the wrong length"))?
        .to_vec();
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

pub fn encode_ssdm(map: &Map<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + map.data.len() * 4);
    out.extend_from_slice(b"SSDM");
    out.extend_from_slice(&(map.width as u32).to_le_bytes());
    out.extend_from_slice(&(map.height as u32).to_le_bytes());
    out.extend_from_slice(&[1, 0, 0, 0]);
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_ssdm(bytes: &[u8]) -> Result<Map<f32>> {
    if bytes.get(..4) != Some(b"SSDM") {
        return Err(Error::format("ssdm", "bad magic"));
    }
    let w = u32_at(bytes, 4, "ssdm")? as usize;
    let h = u32_at(bytes, 8, "ssdm")? as usize;
    if bytes.get(12) != Some(&1) {
        return Err(Error::format("ssdm", "unsupported dtype"));
    }
    let body = &bytes[16.min(bytes.len())..];
    if body.len() != w * h * 4 {
        return Err(Error::format("ssdm", "payload has the wrong length"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Map::from_vec(w, h, data)
}

fn pack_bits(bits: impl Iterator<Item = bool>, out: &mut Vec<u8>) {
    let mut byte = 0u8;
    let mut n = 0;
    for b in bits {
        byte |= (b as u8) << n;
        n += 1;
        if n == 8 {
            out.push(byte);
            byte = 0;
            n = 0;
        }
    }
    if n > 0 {
        out.push(byte);
    }
}

fn bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] >> (i % 8) & 1 == 1
}

pub fn encode_ssbm(mask: &Map<bool>) -> Vec<u8> {
    let mut out = b"SSBM".to_vec();
    out.extend_from_slice(&(mask.width as u32).to_le_bytes());
    out.extend_from_slice(&(mask.height as u32).to_le_bytes());
    for row in mask.data.chunks(mask.width.max(1)) {
        pack_bits(row.iter().copied(), &mut out);
    }
    out
}

pub fn decode_ssbm(bytes: &[u8]) -> Result<Map<bool>> {
    if bytes.get(..4) != Some(b"SSBM") {
        return Err(Error::format("ssbm", "bad magic"));
    }
    let w = u32_at(bytes, 4, "ssbm")? as usize;
    let h = u32_at(bytes, 8, "ssbm")? as usize;
    let stride = w.div_ceil(8);
    let body = &bytes[12..];
    if body.len() != stride * h {
        return Err(Error::format("ssbm", "payload has the wrong length"));
    }
    let mut data = Vec::with_capacity(w * h);
    for row in body.chunks_exact(stride.max(1)).take(h) {
        data.extend((0..w).map(|x| bit(row, x)));
    }
    Map::from_vec(w, h, data)
}

pub fn encode_ssvx(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = b"SSVX".to_vec();
    out.extend_from_slice(&(grid.res as u32).to_le_bytes());
    pack_bits(grid.cells.iter().copied(), &mut out);
    out
}

pub fn decode_ssvx(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.get(..4) != Some(b"SSVX") {
        return Err(Error::format("ssvx", "bad magic"));
    }
    let r = u32_at(bytes, 4, "ssvx")? as usize;
    let n = r * r * r;
    let body = &bytes[8..];
    if body.len() != n.div_ceil(8) {
        return Err(Error::format("ssvx", "payload has the wrong length"));
    }
    Ok(VoxelGrid {
        res: r,
        cells: (0..n).map(|i| bit(body, i)).collect(),
    })
}

/// Coordinates are written at f32 precision.
pub fn encode_ply(cloud: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let _ = writeln!(s, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
    }
    s
}

pub fn decode_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(Error::format("ply", "bad magic"));
    }
    let mut count = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("format ") {
            if !rest.starts_with("ascii") {
                return Err(Error::format("ply", "only ASCII PLY is supported"));
            }
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::format("ply", "bad vertex count"))?,
            );
        }
    }
    let count = count.ok_or_else(|| Error::format("ply", "missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    for line in lines.take(count) {
        let v: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f32>().map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format("ply", format!("bad vertex line `{line}`")))?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::format("ply", format!("bad vertex line `{line}`")));
        }
        points.push([v[0], v[1], v[2]]);
    }
    if points.len() != count {
        return Err(Error::format("ply", "fewer vertices than declared"));
    }
    Ok(PointCloud { points })
}

pub fn encode_meta(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn decode_meta(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::format("meta", format!("line without `=`: {l}")))
        })
        .collect()
}

macro_rules! file_io {
    ($write:ident, $read:ident, $ty:ty, $enc:ident, $dec:ident) => {
        pub fn $write(path: &Path, v: &$ty) -> Result<()> {
            write_file(path, &$enc(v))
        }

        pub fn $read(path: &Path) -> Result<$ty> {
            $dec(&read_file(path)?)
        }
    };
}

file_io!(write_ppm, read_ppm, RgbImage, encode_ppm, decode_ppm);
file_io!(write_ssdm, read_ssdm, Map<f32>, encode_ssdm, decode_ssdm);
file_io!(write_ssbm, read_ssbm, Map<bool>, encode_ssbm, decode_ssbm);
file_io!(write_ssvx, read_ssvx, VoxelGrid, encode_ssvx, decode_ssvx);

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_file(path, encode_ply(cloud).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format("ply", "not UTF-8"))?;
    decode_ply(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ssdm_roundtrip(w in 1usize..9, h in 1usize..9, seed in any::<u32>()) {
            let data: Vec<f32> = (0..w * h)
                .map(|i| if i % 5 == 0 { f32::INFINITY } else { (seed as f32) * 1e-3 + i as f32 })
                .collect();
            let m = Map::from_vec(w, h, data).unwrap();
            prop_assert_eq!(decode_ssdm(&encode_ssdm(&m)).unwrap(), m);
        }

        #[test]
        fn ssbm_roundtrip(w in 1usize..20, h in 1usize..6, bits in prop::collection::vec(any::<bool>(), 120)) {
            let m = Map::from_vec(w, h, bits[..w * h].to_vec()).unwrap();
            let enc = encode_ssbm(&m);
            prop_assert_eq!(enc.len(), 12 + w.div_ceil(8) * h);
            prop_assert_eq!(decode_ssbm(&enc).unwrap(), m);
        }

        #[test]
        fn ssvx_roundtrip(r in 1usize..6, bits in prop::collection::vec(any::<bool>(), 125)) {
            let g = VoxelGrid { res: r, cells: bits[..r * r * r].to_vec() };
            prop_assert_eq!(decode_ssvx(&encode_ssvx(&g)).unwrap(), g);
        }
    }

    #[test]
    fn ppm_roundtrip_and_layout() {
        let mut img = RgbImage::new(3, 2);
        img.put(2, 1, [1, 2, 3]);
        let enc = encode_ppm(&img);
        assert!(enc.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode_ppm(&enc).unwrap(), img);
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
    }

    #[test]
    fn ssvx_bit_order() {
        let mut g = VoxelGrid::empty(2);
        g.cells[1] = true; // x = 1, y = 0, z = 0
        g.cells[7] = true;
        assert_eq!(&encode_ssvx(&g)[8..], &[0b1000_0010]);
    }

    #[test]
    fn ply_roundtrip() {
        let c = PointCloud {
            points: vec![[0.25, -0.5, 0.125], [1.5, 2.0, -3.0]],
        };
        assert_eq!(decode_ply(&encode_ply(&c)).unwrap(), c);
        assert!(decode_ply("ply\nformat ascii 1.0\nelement vertex 2\nend_header\n1 2 3\n").is_err());
    }

    #[test]
    fn meta_roundtrip() {
        let e = vec![("kind".to_string(), "table".to_string()), ("seed".into(), "4".into())];
        assert_eq!(decode_meta(&encode_meta(&e)).unwrap(), e);
    }
}
