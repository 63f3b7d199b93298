//! JSON dataset manifests: clouds, posed images and ground-truth pairs.
//!
//! Matrices are written as row-major nested arrays (3×3 intrinsics, 4×4
//! extrinsics and ground truth). Extrinsics map cloud → camera; a pair's
//! `gt` maps cloud `id_p` into the frame of cloud `id_q`. Relative paths
//! are resolved against the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, RigidTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEntry {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub intrinsic: Matrix3<f64>,
    pub extrinsic: RigidTransform,
    pub feature_raster: Option<PathBuf>,
}

impl ImageEntry {
    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(self.intrinsic, self.extrinsic, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudEntry {
    pub path: PathBuf,
    pub images: Vec<ImageEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub normal: [f64; 3],
    pub offset: f64,
}

/// Per-pair planarity annotation written by the subset extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarityBlock {
    pub r: Option<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub overlap_size: usize,
    pub plane_inliers: usize,
    pub is_planar: bool,
    pub plane: Option<PlaneRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEntry {
    pub id_p: String,
    pub id_q: String,
    pub gt: RigidTransform,
    pub overlap_ratio: Option<f64>,
    pub planarity: Option<PlanarityBlock>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub clouds: BTreeMap<String, CloudEntry>,
    pub pairs: Vec<PairEntry>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

fn schema(path: &str) -> Error {
    Error::Schema(path.to_string())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, at: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(&format!("{at}.{key}")))
}

fn as_object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| schema(at))
}

fn as_str<'a>(v: &'a Value, at: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| schema(at))
}

fn as_u32(v: &Value, at: &str) -> Result<u32> {
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| schema(at))
}

fn as_matrix<const N: usize>(v: &Value, at: &str) -> Result<[[f64; N]; N]> {
    let rows = v.as_array().filter(|r| r.len() == N).ok_or_else(|| schema(at))?;
    let mut m = [[0.0; N]; N];
    for (i, row) in rows.iter().enumerate() {
        let cols = row.as_array().filter(|c| c.len() == N).ok_or_else(|| schema(at))?;
        for (j, c) in cols.iter().enumerate() {
            m[i][j] = c.as_f64().filter(|x| x.is_finite()).ok_or_else(|| schema(at))?;
        }
    }
    Ok(m)
}

fn matrix3(v: &Value, at: &str) -> Result<Matrix3<f64>> {
    let m = as_matrix::<3>(v, at)?;
    Ok(Matrix3::from_fn(|r, c| m[r][c]))
}

fn transform(v: &Value, at: &str) -> Result<RigidTransform> {
    let m = as_matrix::<4>(v, at)?;
    RigidTransform::from_matrix4(&Matrix4::from_fn(|r, c| m[r][c])).map_err(|_| schema(at))
}

fn rows3(m: &Matrix3<f64>) -> Value {
    json!((0..3).map(|r| (0..3).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn rows4(t: &RigidTransform) -> Value {
    let m = t.to_matrix4();
    json!((0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

impl DatasetManifest {
    pub fn from_json_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        Self::from_value(&root, base_dir.into())
    }

    fn from_value(root: &Value, base_dir: PathBuf) -> Result<Self> {
        let root = as_object(root, "$")?;
        let mut clouds = BTreeMap::new();
        let cloud_obj = as_object(field(root, "clouds", "$")?, "clouds")?;
        for (id, entry) in cloud_obj {
            let at = format!("clouds.{id}");
            let entry = as_object(entry, &at)?;
            let path = PathBuf::from(as_str(field(entry, "path", &at)?, &format!("{at}.path"))?);
            let mut images = Vec::new();
            if let Some(list) = entry.get("images") {
                let list = list.as_array().ok_or_else(|| schema(&format!("{at}.images")))?;
                for (k, img) in list.iter().enumerate() {
                    let at = format!("{at}.images[{k}]");
                    let img = as_object(img, &at)?;
                    let feature_raster = match img.get("feature_raster") {
                        None | Some(Value::Null) => None,
                        Some(v) => Some(PathBuf::from(as_str(v, &format!("{at}.feature_raster"))?)),
                    };
                    let entry = ImageEntry {
                        path: PathBuf::from(as_str(field(img, "path", &at)?, &format!("{at}.path"))?),
                        width: as_u32(field(img, "width", &at)?, &format!("{at}.width"))?,
                        height: as_u32(field(img, "height", &at)?, &format!("{at}.height"))?,
                        intrinsic: matrix3(field(img, "intrinsic", &at)?, &format!("{at}.intrinsic"))?,
                        extrinsic: transform(field(img, "extrinsic", &at)?, &format!("{at}.extrinsic"))?,
                        feature_raster,
                    };
                    entry.camera().map_err(|_| schema(&format!("{at}.intrinsic")))?;
                    images.push(entry);
                }
            }
            clouds.insert(id.clone(), CloudEntry { path, images });
        }

        let mut pairs = Vec::new();
        let list = field(root, "pairs", "$")?
            .as_array()
            .ok_or_else(|| schema("pairs"))?;
        for (i, pair) in list.iter().enumerate() {
            let at = format!("pairs[{i}]");
            let pair = as_object(pair, &at)?;
            let id_p = as_str(field(pair, "id_p", &at)?, &format!("{at}.id_p"))?.to_string();
            let id_q = as_str(field(pair, "id_q", &at)?, &format!("{at}.id_q"))?.to_string();
            if !clouds.contains_key(&id_p) {
                return Err(schema(&format!("{at}.id_p")));
            }
            if !clouds.contains_key(&id_q) {
                return Err(schema(&format!("{at}.id_q")));
            }
            let gt = transform(field(pair, "gt", &at)?, &format!("{at}.gt"))?;
            let overlap_ratio = match pair.get("overlap_ratio") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_f64()
                        .filter(|r| (0.0..=1.0).contains(r))
                        .ok_or_else(|| schema(&format!("{at}.overlap_ratio")))?,
                ),
            };
            let planarity = match pair.get("planarity") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    serde_json::from_value(v.clone())
                        .map_err(|_| schema(&format!("{at}.planarity")))?,
                ),
            };
            pairs.push(PairEntry {
                id_p,
                id_q,
                gt,
                overlap_ratio,
                planarity,
            });
        }
        Ok(Self {
            clouds,
            pairs,
            base_dir,
        })
    }

    pub fn to_value(&self) -> Value {
        let mut clouds = Map::new();
        for (id, c) in &self.clouds {
            let images: Vec<Value> = c
                .images
                .iter()
                .map(|img| {
                    let mut o = Map::new();
                    o.insert("path".into(), json!(path_str(&img.path)));
                    o.insert("width".into(), json!(img.width));
                    o.insert("height".into(), json!(img.height));
                    o.insert("intrinsic".into(), rows3(&img.intrinsic));
                    o.insert("extrinsic".into(), rows4(&img.extrinsic));
                    if let Some(r) = &img.feature_raster {
                        o.insert("feature_raster".into(), json!(path_str(r)));
                    }
                    Value::Object(o)
                })
                .collect();
            clouds.insert(
                id.clone(),
                json!({ "path": path_str(&c.path), "images": images }),
            );
        }
        let pairs: Vec<Value> = self
            .pairs
            .iter()
            .map(|p| {
                let mut o = Map::new();
                o.insert("id_p".into(), json!(p.id_p));
                o.insert("id_q".into(), json!(p.id_q));
                o.insert("gt".into(), rows4(&p.gt));
                if let Some(r) = p.overlap_ratio {
                    o.insert("overlap_ratio".into(), json!(r));
                }
                if let Some(b) = &p.planarity {
                    o.insert("planarity".into(), serde_json::to_value(b).expect("plain data"));
                }
                Value::Object(o)
            })
            .collect();
        json!({ "clouds": clouds, "pairs": pairs })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("plain data");
        s.push('\n');
        s
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn cloud(&self, id: &str) -> Result<&CloudEntry> {
        self.clouds
            .get(id)
            .ok_or_else(|| schema(&format!("clouds.{id}")))
    }

    /// Checks that every referenced file exists.
    pub fn check_paths(&self) -> Result<()> {
        let missing = |p: PathBuf| {
            Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found"),
            )
        };
        for c in self.clouds.values() {
            let p = self.resolve(&c.path);
            if !p.is_file() {
                return Err(missing(p));
            }
            for img in &c.images {
                for rel in std::iter::once(&img.path).chain(img.feature_raster.as_ref()) {
                    let p = self.resolve(rel);
                    if !p.is_file() {
                        return Err(missing(p));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    DatasetManifest::from_json_str(&text, base)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, manifest.to_json_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
      "clouds": {
        "a": {"path": "a.ply", "images": [{
            "path": "a0.ppm", "width": 4, "height": 3,
            "intrinsic": [[2, 0, 2], [0, 2, 1.5], [0, 0, 1]],
            "extrinsic": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 0, 1]]
        }]},
        "b": {"path": "b.xyz"}
      },
      "pairs": [{"id_p": "a", "id_q": "b", "overlap_ratio": 0.4,
                 "gt": [[0, -1, 0, 0.5], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]}]
    }"#;

    #[test]
    fn parses_minimal_manifest() {
        let m = DatasetManifest::from_json_str(MINIMAL, "/data").unwrap();
        assert_eq!(m.clouds.len(), 2);
        let a = m.cloud("a").unwrap();
        assert_eq!(a.path, PathBuf::from("a.ply"));
        assert_eq!(a.images[0].width, 4);
        assert_eq!(a.images[0].intrinsic[(1, 2)], 1.5);
        assert_eq!(a.images[0].extrinsic.translation.z, 1.0);
        assert!(m.cloud("b").unwrap().images.is_empty());
        let p = &m.pairs[0];
        assert_eq!((p.id_p.as_str(), p.id_q.as_str()), ("a", "b"));
        assert_eq!(p.gt.translation.x, 0.5);
        assert_eq!(p.gt.rotation[(0, 1)], -1.0);
        assert_eq!(p.overlap_ratio, Some(0.4));
        assert_eq!(m.resolve(Path::new("a.ply")), PathBuf::from("/data/a.ply"));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        v["pairs"][0].as_object_mut().unwrap().remove("gt");
        match DatasetManifest::from_json_str(&v.to_string(), "") {
            Err(Error::Schema(f)) => assert_eq!(f, "pairs[0].gt"),
            other => panic!("unexpected {other:?}"),
        }

        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        v["pairs"][0]["gt"][3][0] = json!(1.0);
        assert!(matches!(
            DatasetManifest::from_json_str(&v.to_string(), ""),
            Err(Error::Schema(f)) if f == "pairs[0].gt"
        ));

        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        v["clouds"]["a"]["images"][0]["intrinsic"][0][0] = json!(0.0);
        assert!(matches!(
            DatasetManifest::from_json_str(&v.to_string(), ""),
            Err(Error::Schema(f)) if f == "clouds.a.images[0].intrinsic"
        ));

        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        v["pairs"][0]["id_q"] = json!("zzz");
        assert!(matches!(
            DatasetManifest::from_json_str(&v.to_string(), ""),
            Err(Error::Schema(f)) if f == "pairs[0].id_q"
        ));
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut m = DatasetManifest::from_json_str(MINIMAL, "base").unwrap();
        m.pairs[0].planarity = Some(PlanarityBlock {
            r: Some(0.25),
            tau1: 0.05,
            tau2: 0.7,
            overlap_size: 8,
            plane_inliers: 2,
            is_planar: false,
            plane: Some(PlaneRecord {
                normal: [0.0, 0.0, 1.0],
                offset: -0.1,
            }),
        });
        m.clouds.get_mut("a").unwrap().images[0].feature_raster = Some("a0.bin".into());
        let back = DatasetManifest::from_json_str(&m.to_json_string(), "base").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn referenced_files_are_checked_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, MINIMAL).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.base_dir, dir.path());
        assert!(matches!(m.check_paths(), Err(Error::Io { .. })));
        for f in ["a.ply", "a0.ppm", "b.xyz"] {
            fs::write(dir.path().join(f), "").unwrap();
        }
        m.check_paths().unwrap();
    }
}
