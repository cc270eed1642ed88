//! Point-cloud files and pair manifests.
//!
//! Clouds are either ASCII XYZ (one `x y z` per line, `#` comments) or the
//! little-endian binary layout `SPINPC1`, count as `u64`, then `f32` triples.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform, Vec3};

pub const CLOUD_MAGIC: &[u8; 7] = b"SPINPC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ascii,
    Binary,
}

impl CloudFormat {
    /// `.xyz`, `.txt`, `.asc` and `.pts` are ASCII; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("xyz" | "txt" | "asc" | "pts") => CloudFormat::Ascii,
            _ => CloudFormat::Binary,
        }
    }
}

/// Reads a cloud, detecting the binary layout by its magic bytes.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut file = BufReader::new(File::open(path)?);
    let head = file.fill_buf()?;
    if head.starts_with(CLOUD_MAGIC) {
        return read_binary(path, file);
    }
    if CloudFormat::from_path(path) == CloudFormat::Binary {
        return Err(Error::MagicMismatch {
            path: path.to_path_buf(),
            expected: "SPINPC1".into(),
        });
    }
    read_ascii(path, file)
}

fn read_binary(path: &Path, mut r: impl Read) -> Result<PointCloud> {
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic)?;
    let mut count = [0u8; 8];
    r.read_exact(&mut count)?;
    let n = u64::from_le_bytes(count) as usize;
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != n * 12 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("header announces {n} points but {} bytes follow", buf.len()),
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    Ok(PointCloud::new(
        buf.chunks_exact(12)
            .map(|c| Vec3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
            .collect(),
    ))
}

fn read_ascii(path: &Path, r: impl BufRead) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 coordinates, found {}", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, field) in v.iter_mut().zip(&fields) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(format!("{field:?} is not a number")))?;
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(PointCloud::new(points))
}

/// Writes `cloud` in the format implied by the extension of `path`.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match CloudFormat::from_path(path) {
        CloudFormat::Binary => {
            w.write_all(CLOUD_MAGIC)?;
            w.write_all(&(cloud.len() as u64).to_le_bytes())?;
            for p in cloud.iter() {
                for c in p.iter() {
                    w.write_all(&(*c as f32).to_le_bytes())?;
                }
            }
        }
        CloudFormat::Ascii => {
            for p in cloud.iter() {
                writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One fragment pair: `transform` maps points of A into the frame of B.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub frag_a: PathBuf,
    pub frag_b: PathBuf,
    pub overlap: f64,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairManifest {
    pub pairs: Vec<PairEntry>,
    /// Directory that relative fragment paths are resolved against.
    pub root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    #[serde(rename = "fragA")]
    frag_a: String,
    #[serde(rename = "fragB")]
    frag_b: String,
    overlap: f64,
    r00: f64,
    r01: f64,
    r02: f64,
    r10: f64,
    r11: f64,
    r12: f64,
    r20: f64,
    r21: f64,
    r22: f64,
    t0: f64,
    t1: f64,
    t2: f64,
}

impl ManifestRow {
    fn from_entry(e: &PairEntry) -> Self {
        let r = e.transform.rotation;
        let t = e.transform.translation;
        Self {
            frag_a: e.frag_a.to_string_lossy().into_owned(),
            frag_b: e.frag_b.to_string_lossy().into_owned(),
            overlap: e.overlap,
            r00: r[(0, 0)],
            r01: r[(0, 1)],
            r02: r[(0, 2)],
            r10: r[(1, 0)],
            r11: r[(1, 1)],
            r12: r[(1, 2)],
            r20: r[(2, 0)],
            r21: r[(2, 1)],
            r22: r[(2, 2)],
            t0: t.x,
            t1: t.y,
            t2: t.z,
        }
    }

    fn into_entry(self) -> PairEntry {
        let v = [
            self.r00, self.r01, self.r02, self.r10, self.r11, self.r12, self.r20, self.r21, self.r22, self.t0,
            self.t1, self.t2,
        ];
        PairEntry {
            frag_a: PathBuf::from(self.frag_a),
            frag_b: PathBuf::from(self.frag_b),
            overlap: self.overlap,
            transform: RigidTransform::from_row_major(&v),
        }
    }
}

impl PairManifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            pairs: Vec::new(),
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.root.join(path)
        }
    }

    pub fn load_pair(&self, i: usize) -> Result<(PointCloud, PointCloud)> {
        let e = &self.pairs[i];
        Ok((read_cloud(&self.resolve(&e.frag_a))?, read_cloud(&self.resolve(&e.frag_b))?))
    }

    /// Reads a manifest CSV; relative fragment paths resolve against its directory.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
            let entry = row?.into_entry();
            let line = i + 2;
            if !(0.0..=1.0).contains(&entry.overlap) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("overlap {} outside [0, 1]", entry.overlap),
                });
            }
            if !entry.transform.is_proper(1e-6) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "rotation is not orthonormal with determinant 1".into(),
                });
            }
            pairs.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { pairs, root })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.pairs {
            w.serialize(ManifestRow::from_entry(e))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_about_z;
    use crate::rng::rng_for;
    use rand::Rng;

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut rng = rng_for(1, &[]);
        let cloud = PointCloud::new(
            (0..1000)
                .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random(), rng.random_range(-1e3..1e3)))
                .collect(),
        );
        write_cloud(&path, &cloud).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 7 + 8 + 12 * 1000);
        let back = read_cloud(&path).unwrap();
        for (a, b) in cloud.iter().zip(back.iter()) {
            for k in 0..3 {
                assert_eq!(b[k], a[k] as f32 as f64);
            }
        }
    }

    #[test]
    fn ascii_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        std::fs::write(&path, "# scanner v2\n\n1 2 3\n  4.5 -6 7e-1  # trailing\n\n# end\n").unwrap();
        let c = read_cloud(&path).unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.5, -6.0, 0.7)]);
        write_cloud(&path, &c).unwrap();
        assert_eq!(read_cloud(&path).unwrap(), c);
    }

    #[test]
    fn ascii_arity_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "0 0 0\n# c\n1.0 2.0\n").unwrap();
        match read_cloud(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "0 0 zero\n").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn binary_without_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        std::fs::write(&path, b"PLYDATA........").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::MagicMismatch { .. })));
        let path = dir.path().join("short.bin");
        let mut bytes = CLOUD_MAGIC.to_vec();
        bytes.extend_from_slice(&5u64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let mut m = PairManifest::new(dir.path());
        m.pairs.push(PairEntry {
            frag_a: "a.bin".into(),
            frag_b: "b.bin".into(),
            overlap: 0.42,
            transform: RigidTransform::new(rotation_about_z(0.3), Vec3::new(1.0, -2.0, 0.5)),
        });
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("fragA,fragB,overlap,r00,r01,r02,r10,r11,r12,r20,r21,r22,t0,t1,t2\n"));
        let back = PairManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.resolve(Path::new("a.bin")), dir.path().join("a.bin"));
    }

    #[test]
    fn manifest_rejects_bad_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        std::fs::write(
            &path,
            "fragA,fragB,overlap,r00,r01,r02,r10,r11,r12,r20,r21,r22,t0,t1,t2\na,b,1.5,1,0,0,0,1,0,0,0,1,0,0,0\n",
        )
        .unwrap();
        assert!(matches!(PairManifest::read(&path), Err(Error::Parse { line: 2, .. })));
    }
}
