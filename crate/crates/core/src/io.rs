//! On-disk formats.
//!
//! - `.xyz`: ASCII, one point per line, three decimal floats separated by
//!   single spaces, LF line endings, no header.
//! - `.pcb`: binary cloud. Magic `PCB1`, little-endian u32 count, then
//!   `count * 3` little-endian float32 coordinates.
//! - `.ccm`: binary coordinate map. Magic `CCM1`, u32 height, u32 width, nine
//!   float32 pose entries row-major, `h*w*3` float32 pixels, `h*w` mask bytes
//!   (0 or 1). All little-endian.
//! - `.ppm`: the standard binary P6 preview at 8 bits per channel; channel
//!   values are `round(255 * value)`, background black.
//! - checkpoints: magic `GFCK`, u32 version (1), u32 tensor count, then per
//!   tensor a u16 name length, UTF-8 name, u8 rank, rank u32 dims, and the
//!   float32 data. All little-endian.

use crate::ccm::{CameraPose, Ccm};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use std::fs;
use std::path::Path;

fn open_err(path: &Path, e: std::io::Error) -> Error {
    Error::UnreadableFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

// --- .xyz -------------------------------------------------------------

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for p in cloud.points() {
        // f64 Display is shortest-round-trip decimal notation, so values
        // survive a write/read cycle exactly.
        out.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| open_err(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::format(
                "xyz",
                format!("{}:{}: expected 3 fields, got {}", path.display(), lineno + 1, fields.len()),
            ));
        }
        let mut p = [0.0f64; 3];
        for (a, f) in fields.iter().enumerate() {
            p[a] = f.parse::<f64>().map_err(|_| {
                Error::format("xyz", format!("{}:{}: bad float {f:?}", path.display(), lineno + 1))
            })?;
        }
        points.push(p);
    }
    PointCloud::new(points)
}

// --- .pcb -------------------------------------------------------------

const PCB_MAGIC: &[u8; 4] = b"PCB1";

pub fn write_pcb(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + cloud.len() * 12);
    buf.extend_from_slice(PCB_MAGIC);
    buf.extend_from_slice(&u32::try_from(cloud.len()).map_err(|_| Error::format("pcb", "cloud too large"))?.to_le_bytes());
    for p in cloud.points() {
        for &c in p {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_pcb(path: &Path) -> Result<PointCloud> {
    let data = fs::read(path).map_err(|e| open_err(path, e))?;
    let mut r = ByteReader::new(&data, "pcb");
    r.expect_magic(PCB_MAGIC)?;
    let count = r.u32()? as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        points.push([f64::from(r.f32()?), f64::from(r.f32()?), f64::from(r.f32()?)]);
    }
    r.expect_end()?;
    PointCloud::new(points)
}

/// Reads a cloud by extension: `.xyz` or `.pcb`.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => read_xyz(path),
        Some("pcb") => read_pcb(path),
        other => Err(Error::format(
            "cloud",
            format!("{}: unsupported extension {other:?} (expected .xyz or .pcb)", path.display()),
        )),
    }
}

/// Writes a cloud by extension: `.xyz` or `.pcb`.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => write_xyz(path, cloud),
        Some("pcb") => write_pcb(path, cloud),
        other => Err(Error::format(
            "cloud",
            format!("{}: unsupported extension {other:?} (expected .xyz or .pcb)", path.display()),
        )),
    }
}

// --- .ccm -------------------------------------------------------------

const CCM_MAGIC: &[u8; 4] = b"CCM1";

pub fn write_ccm(path: &Path, ccm: &Ccm) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + 36 + ccm.pixels.len() * 4 + ccm.mask.len());
    buf.extend_from_slice(CCM_MAGIC);
    buf.extend_from_slice(&(ccm.h as u32).to_le_bytes());
    buf.extend_from_slice(&(ccm.w as u32).to_le_bytes());
    for v in ccm.pose.to_f32_row_major() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &ccm.pixels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &m in &ccm.mask {
        buf.push(u8::from(m));
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_ccm(path: &Path) -> Result<Ccm> {
    let data = fs::read(path).map_err(|e| open_err(path, e))?;
    let mut r = ByteReader::new(&data, "ccm");
    r.expect_magic(CCM_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let mut rot = [[0.0f64; 3]; 3];
    for row in &mut rot {
        for v in row.iter_mut() {
            *v = f64::from(r.f32()?);
        }
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for _ in 0..h * w * 3 {
        pixels.push(r.f32()?);
    }
    let mut mask = Vec::with_capacity(h * w);
    for _ in 0..h * w {
        let b = r.u8()?;
        if b > 1 {
            return Err(Error::format("ccm", format!("mask byte {b} is not 0 or 1")));
        }
        mask.push(b == 1);
    }
    r.expect_end()?;
    Ok(Ccm { h, w, pixels, mask, pose: CameraPose { rotation: rot } })
}

// --- .ppm -------------------------------------------------------------

/// 8-bit binary P6 preview of a coordinate map. Channel value is
/// `round(255 * v)` clamped to [0, 255]; uncovered pixels are black.
pub fn write_ppm(path: &Path, ccm: &Ccm) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + ccm.h * ccm.w * 3);
    buf.extend_from_slice(format!("P6\n{} {}\n255\n", ccm.w, ccm.h).as_bytes());
    for at in 0..ccm.h * ccm.w {
        for ch in 0..3 {
            let v = if ccm.mask[at] { ccm.pixels[at * 3 + ch] } else { 0.0 };
            buf.push((f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

// --- checkpoints --------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"GFCK";
const CHECKPOINT_VERSION: u32 = 1;

/// A named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_checkpoint(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| Error::format("checkpoint", "too many tensors"))?.to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format("checkpoint", format!("name too long: {}", t.name)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name);
        let ndim = u8::try_from(t.dims.len())
            .map_err(|_| Error::format("checkpoint", format!("rank too large for {}", t.name)))?;
        buf.push(ndim);
        let mut numel = 1usize;
        for &d in &t.dims {
            buf.extend_from_slice(&u32::try_from(d).map_err(|_| Error::format("checkpoint", "dim too large"))?.to_le_bytes());
            numel *= d;
        }
        if numel != t.data.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{}: dims {:?} imply {numel} values, buffer has {}", t.name, t.dims, t.data.len()),
            ));
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let data = fs::read(path).map_err(|e| open_err(path, e))?;
    let mut r = ByteReader::new(&data, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?.to_vec())
            .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        let mut numel = 1usize;
        for _ in 0..ndim {
            let d = r.u32()? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::format("checkpoint", format!("{name}: dim overflow")))?;
            dims.push(d);
        }
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f32()?);
        }
        tensors.push(NamedTensor { name, dims, data: values });
    }
    r.expect_end()?;
    Ok(tensors)
}

// --- shared byte cursor -------------------------------------------------

struct ByteReader<'a> {
    data: &'a [u8],
    at: usize,
    format: &'static str,
}

impl<'a> ByteReader<'a> {
    fn new(data: &'a [u8], format: &'static str) -> Self {
        ByteReader { data, at: 0, format }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.data.len() {
            return Err(Error::format(self.format, "unexpected end of data"));
        }
        let s = &self.data[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4)?;
        if got != magic {
            return Err(Error::format(self.format, format!("bad magic {got:?}")));
        }
        Ok(())
    }

    fn expect_end(&self) -> Result<()> {
        if self.at != self.data.len() {
            return Err(Error::format(self.format, format!("{} trailing bytes", self.data.len() - self.at)));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
}

/// Convenience used by the CLI and tests: read/write helpers that keep all
/// path handling in one place.
pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccm::{canonical_views, render_ccm};
    use crate::rng;
    use rand::Rng;
    use tempfile::tempdir;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut r = rng::stream(seed, "io-cloud");
        PointCloud::new((0..n).map(|_| [r.gen(), r.gen(), r.gen()]).collect()).unwrap()
    }

    #[test]
    fn xyz_roundtrip_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = random_cloud(50, 1);
        write_xyz(&path, &c).unwrap();
        let back = read_xyz(&path).unwrap();
        assert_eq!(back, c, "f64 Display output must parse back exactly");
        // Format check: single spaces, LF, no header.
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.starts_with('#'));
        for line in text.lines() {
            assert_eq!(line.split(' ').count(), 3);
            assert!(!line.contains('\t'));
        }
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn xyz_tiny_values_stay_decimal() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("tiny.xyz");
        let c = PointCloud::new(vec![[1e-9, 1234.5, -0.25]]).unwrap();
        write_xyz(&path, &c).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.to_lowercase().contains('e'), "no exponent notation: {text}");
        assert_eq!(read_xyz(&path).unwrap(), c);
    }

    #[test]
    fn xyz_rejects_malformed_lines() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "0 0 0\n1 2\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::BadFormat { .. })));
        fs::write(&path, "0 0 zebra\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::BadFormat { .. })));
    }

    #[test]
    fn pcb_roundtrip_and_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pcb");
        let c = PointCloud::new(vec![[0.5, -1.0, 2.0], [3.25, 0.0, -0.125]]).unwrap();
        write_pcb(&path, &c).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PCB1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 2 * 3 * 4);
        assert_eq!(f32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0.5);
        let back = read_pcb(&path).unwrap();
        assert_eq!(back, c, "these values are exact in f32");
    }

    #[test]
    fn pcb_rejects_truncation_and_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.pcb");
        fs::write(&path, b"PCB1\x02\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_pcb(&path), Err(Error::BadFormat { .. })));
        fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_pcb(&path), Err(Error::BadFormat { .. })));
    }

    #[test]
    fn ccm_roundtrip_and_golden_layout() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.ccm");
        let c = PointCloud::new(vec![[0.25, 0.75, 0.5]]).unwrap();
        let front = canonical_views()[0];
        let ccm = render_ccm(&c, &front, 4, 4).unwrap();
        write_ccm(&path, &ccm).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CCM1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 4);
        // Identity pose row-major: first entry 1.0.
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 12 + 36 + 4 * 4 * 3 * 4 + 16);
        let back = read_ccm(&path).unwrap();
        assert_eq!(back, ccm);
    }

    #[test]
    fn ppm_header_and_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.ppm");
        let c = PointCloud::new(vec![[1.0, 0.5, 0.0]]).unwrap();
        let front = canonical_views()[0];
        let ccm = render_ccm(&c, &front, 2, 2).unwrap();
        write_ppm(&path, &ccm).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 2 * 2 * 3);
        // The covered pixel: x=1 -> col 1, y=0.5 -> floor(1.0)=1 -> row 0.
        // Channels: round(255*1)=255, round(255*0.5)=128, 0.
        let body = &bytes[header.len()..];
        assert_eq!(&body[(0 * 2 + 1) * 3..(0 * 2 + 1) * 3 + 3], &[255, 128, 0]);
        // Background stays black.
        assert_eq!(&body[0..3], &[0, 0, 0]);
    }

    #[test]
    fn checkpoint_roundtrip_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ck");
        let p2 = dir.path().join("b.ck");
        let tensors = vec![
            NamedTensor { name: "generator.w".into(), dims: vec![2, 3], data: vec![1.0, -2.5, 0.0, 3.0, 4.0, -0.5] },
            NamedTensor { name: "upsampler1.bias".into(), dims: vec![4], data: vec![0.1, 0.2, 0.3, 0.4] },
        ];
        write_checkpoint(&p1, &tensors).unwrap();
        let back = read_checkpoint(&p1).unwrap();
        assert_eq!(back, tensors);
        write_checkpoint(&p2, &back).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap(), "save/load/save must be byte-identical");
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ck");
        let tensors = vec![NamedTensor { name: "w".into(), dims: vec![2], data: vec![1.0, 2.0] }];
        write_checkpoint(&path, &tensors).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 2);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::BadFormat { .. })));
        // Mismatched dims vs data are rejected at write time.
        let bad = vec![NamedTensor { name: "w".into(), dims: vec![3], data: vec![1.0] }];
        assert!(matches!(write_checkpoint(&path, &bad), Err(Error::BadFormat { .. })));
    }

    #[test]
    fn read_cloud_dispatches_on_extension() {
        let dir = tempdir().unwrap();
        let c = random_cloud(10, 2);
        let xyz = dir.path().join("c.xyz");
        let pcb = dir.path().join("c.pcb");
        write_cloud(&xyz, &c).unwrap();
        write_cloud(&pcb, &c).unwrap();
        assert_eq!(read_cloud(&xyz).unwrap(), c);
        // Binary path quantizes to f32.
        assert_eq!(read_cloud(&pcb).unwrap().len(), 10);
        let unknown = dir.path().join("c.obj");
        fs::write(&unknown, "x").unwrap();
        assert!(matches!(read_cloud(&unknown), Err(Error::BadFormat { .. })));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_xyz(Path::new("/nonexistent/nowhere.xyz")).unwrap_err();
        match err {
            Error::UnreadableFile { path, .. } => assert!(path.contains("nowhere.xyz")),
            other => panic!("expected UnreadableFile, got {other:?}"),
        }
    }
}
