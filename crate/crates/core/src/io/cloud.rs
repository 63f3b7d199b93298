//! ASCII PLY and whitespace-separated XYZ point clouds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        Self {
            points,
            colors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A parsed cloud together with the number of rows dropped for holding
/// non-finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudLoad {
    pub cloud: PointCloud,
    pub dropped_non_finite: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Ply,
    Xyz,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(Self::Ply),
            Some("xyz") | Some("txt") => Ok(Self::Xyz),
            _ => Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                msg: "expected a .ply, .xyz or .txt extension".into(),
            }),
        }
    }
}

pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let loaded = read_cloud(path.as_ref())?;
    if loaded.dropped_non_finite > 0 {
        log::warn!(
            "{}: dropped {} rows with non-finite coordinates",
            path.as_ref().display(),
            loaded.dropped_non_finite
        );
    }
    Ok(loaded.cloud)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<CloudLoad> {
    let path = path.as_ref();
    let format = CloudFormat::from_path(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CloudFormat::Ply => parse_ply(&text, path),
        CloudFormat::Xyz => parse_xyz(&text, path),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("invalid number `{tok}`")))
}

fn parse_u8(tok: &str, path: &Path, line: usize) -> Result<u8> {
    tok.parse::<u8>()
        .map_err(|_| parse_err(path, line, format!("invalid color component `{tok}`")))
}

struct Collector {
    points: Vec<Point3>,
    colors: Vec<[u8; 3]>,
    dropped: usize,
}

impl Collector {
    fn new() -> Self {
        Self {
            points: Vec::new(),
            colors: Vec::new(),
            dropped: 0,
        }
    }

    fn push(&mut self, xyz: [f64; 3], rgb: Option<[u8; 3]>) {
        if xyz.iter().all(|v| v.is_finite()) {
            self.points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
            if let Some(c) = rgb {
                self.colors.push(c);
            }
        } else {
            self.dropped += 1;
        }
    }

    fn finish(self, has_color: bool) -> CloudLoad {
        CloudLoad {
            cloud: PointCloud {
                points: self.points,
                colors: has_color.then_some(self.colors),
            },
            dropped_non_finite: self.dropped,
        }
    }
}

fn parse_xyz(text: &str, path: &Path) -> Result<CloudLoad> {
    let mut out = Collector::new();
    let mut has_color: Option<bool> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        let colored = match toks.len() {
            3 => false,
            6 => true,
            k => return Err(parse_err(path, line, format!("expected 3 or 6 columns, found {k}"))),
        };
        if *has_color.get_or_insert(colored) != colored {
            return Err(parse_err(path, line, "inconsistent column count"));
        }
        let xyz = [
            parse_f64(toks[0], path, line)?,
            parse_f64(toks[1], path, line)?,
            parse_f64(toks[2], path, line)?,
        ];
        let rgb = if colored {
            Some([
                parse_u8(toks[3], path, line)?,
                parse_u8(toks[4], path, line)?,
                parse_u8(toks[5], path, line)?,
            ])
        } else {
            None
        };
        out.push(xyz, rgb);
    }
    Ok(out.finish(has_color.unwrap_or(false)))
}

fn parse_ply(text: &str, path: &Path) -> Result<CloudLoad> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut properties: Vec<String> = Vec::new();
    let mut header_done = false;
    for (n, raw) in lines.by_ref() {
        let line = n + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    msg: format!("PLY format `{other}` (only ascii is supported)"),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", count] => {
                vertex_count = Some(
                    count
                        .parse()
                        .map_err(|_| parse_err(path, line, "invalid vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(parse_err(path, line, "list properties on vertices are not supported"));
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    properties.push(name.to_string());
                }
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(path, line, format!("unexpected header line `{raw}`"))),
        }
    }
    if !header_done {
        return Err(parse_err(path, text.lines().count(), "missing end_header"));
    }
    let count = vertex_count.ok_or_else(|| parse_err(path, 1, "no vertex element"))?;
    let find = |name: &str| properties.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 1, "vertex element lacks x/y/z properties")),
    };
    let color = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };

    let mut out = Collector::new();
    let mut read = 0;
    for (n, raw) in lines {
        if read == count {
            break;
        }
        let line = n + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != properties.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} values, found {}", properties.len(), toks.len()),
            ));
        }
        let xyz = [
            parse_f64(toks[ix], path, line)?,
            parse_f64(toks[iy], path, line)?,
            parse_f64(toks[iz], path, line)?,
        ];
        let rgb = match color {
            Some((r, g, b)) => Some([
                parse_u8(toks[r], path, line)?,
                parse_u8(toks[g], path, line)?,
                parse_u8(toks[b], path, line)?,
            ]),
            None => None,
        };
        out.push(xyz, rgb);
        read += 1;
    }
    if read != count {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("expected {count} vertices, found {read}"),
        ));
    }
    Ok(out.finish(color.is_some()))
}

/// Shortest round-trip formatting keeps save→load bit-exact.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(colors) = &cloud.colors {
            let c = colors[i];
            let _ = write!(s, " {} {} {}", c[0], c[1], c[2]);
        }
        s.push('\n');
    }
    s
}

pub fn xyz_string(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(colors) = &cloud.colors {
            let c = colors[i];
            let _ = write!(s, " {} {} {}", c[0], c[1], c[2]);
        }
        s.push('\n');
    }
    s
}

pub fn save_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let text = match CloudFormat::from_path(path)? {
        CloudFormat::Ply => ply_string(cloud),
        CloudFormat::Xyz => xyz_string(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_ply() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("three.ply");
        fs::write(
            &path,
            "ply\nformat ascii 1.0\ncomment golden\nelement vertex 3\nproperty float x\nproperty float y\n\
             property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\n\
             element face 0\nproperty list uchar int vertex_indices\nend_header\n\
             0 0 0 255 0 0\n1.5 -2 3.25 0 255 0\n0.125 0.5 -1 0 0 255\n",
        )
        .unwrap();
        let cloud = load_cloud(&path).unwrap();
        assert_eq!(
            cloud.points,
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.5, -2.0, 3.25),
                Point3::new(0.125, 0.5, -1.0)
            ]
        );
        assert_eq!(cloud.colors.unwrap()[1], [0, 255, 0]);
    }

    #[test]
    fn xyz_drops_nan_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        fs::write(&path, "# header\n0 0 0\nNaN 1 2\n1 2 3\n").unwrap();
        let loaded = read_cloud(&path).unwrap();
        assert_eq!(loaded.dropped_non_finite, 1);
        assert_eq!(loaded.cloud.len(), 2);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        fs::write(&path, "0 0 0\n1 2 x\n").unwrap();
        match read_cloud(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let path = dir.path().join("bin.ply");
        fs::write(&path, "ply\nformat binary_little_endian 1.0\nend_header\n").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::UnsupportedFormat { .. })));
        let path = dir.path().join("c.obj");
        fs::write(&path, "").unwrap();
        assert!(matches!(read_cloud(&path), Err(Error::UnsupportedFormat { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_round_trip(
            coords in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..40),
            colored in any::<bool>(),
        ) {
            let points: Vec<Point3> = coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect();
            let colors = colored.then(|| (0..points.len()).map(|i| [i as u8, 7, 255]).collect());
            let cloud = PointCloud { points, colors };
            let dir = tempfile::tempdir().unwrap();
            for name in ["c.ply", "c.xyz"] {
                let path = dir.path().join(name);
                save_cloud(&path, &cloud).unwrap();
                prop_assert_eq!(&load_cloud(&path).unwrap(), &cloud);
            }
        }
    }
}
