//! Pixel-wise image descriptors and multi-view selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureMatrix, FeatureRole, PosedImage, SelectionStrategy};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::io::ppm::RgbImage;

/// RGB (3), 5×5 mean (3), 5×5 std (3), 8-bin gradient orientation histogram.
pub const COLOR_RAW_DIM: usize = 17;
const ORIENTATION_BINS: usize = 8;

fn luma(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Color descriptor of the 5×5 window around pixel `(x, y)`, clamped at
/// the image border.
pub fn local_color_descriptor(img: &RgbImage, x: u32, y: u32) -> [f64; COLOR_RAW_DIM] {
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |dx: i64, dy: i64| {
        let px = (x as i64 + dx).clamp(0, w - 1) as u32;
        let py = (y as i64 + dy).clamp(0, h - 1) as u32;
        img.get_f64(px, py)
    };
    let mut out = [0.0; COLOR_RAW_DIM];
    out[..3].copy_from_slice(&at(0, 0));
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    let mut hist = [0.0; ORIENTATION_BINS];
    for dy in -2..=2 {
        for dx in -2..=2 {
            let c = at(dx, dy);
            for k in 0..3 {
                sum[k] += c[k];
                sq[k] += c[k] * c[k];
            }
            let gx = (luma(at(dx + 1, dy)) - luma(at(dx - 1, dy))) / 2.0;
            let gy = (luma(at(dx, dy + 1)) - luma(at(dx, dy - 1))) / 2.0;
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((angle / std::f64::consts::TAU * ORIENTATION_BINS as f64) as usize).min(ORIENTATION_BINS - 1);
                hist[bin] += mag / 25.0;
            }
        }
    }
    for k in 0..3 {
        let mean = sum[k] / 25.0;
        out[3 + k] = mean;
        out[6 + k] = (sq[k] / 25.0 - mean * mean).max(0.0).sqrt();
    }
    out[9..].copy_from_slice(&hist);
    out
}

/// Image indices by ascending distance from `origin` to each camera center,
/// ties by input index.
pub fn rank_images_by_proximity(origin: &Point3, images: &[PosedImage]) -> Vec<usize> {
    let dist: Vec<f64> = images.iter().map(|im| (im.camera.center() - origin).norm()).collect();
    let mut idx: Vec<usize> = (0..images.len()).collect();
    idx.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    idx
}

fn view_feature(image: &PosedImage, p: &Point3, dim: usize, out: &mut [f64]) -> Option<()> {
    let px = image.camera.project(p)?;
    let (x, y) = px.pixel();
    out.iter_mut().for_each(|v| *v = 0.0);
    match &image.feature_map {
        Some(raster) => {
            for (o, v) in out.iter_mut().zip(raster.pixel(x as u32, y as u32)) {
                *o = *v as f64;
            }
        }
        None => {
            let d = local_color_descriptor(&image.pixels, x as u32, y as u32);
            out[..d.len().min(dim)].copy_from_slice(&d[..d.len().min(dim)]);
        }
    }
    Some(())
}

/// Per-point image descriptor reduced over all views in which the point
/// projects. Points seen by no view get the all-ones vector; with no images
/// at all every row is all-ones and flagged invalid. Rows are not normalized.
///
/// Image ranking for `Complement` uses the cloud frame origin.
pub fn pixelwise_features(
    points: &[Point3],
    images: &[PosedImage],
    strategy: SelectionStrategy,
    dim: usize,
) -> Result<FeatureMatrix> {
    let mut out = FeatureMatrix::zeros(FeatureRole::Pixel2d, points.len(), dim);
    if images.is_empty() {
        for i in 0..points.len() {
            out.row_mut(i).fill(1.0);
            out.set_valid(i, false);
        }
        return Ok(out);
    }
    for im in images {
        if let Some(r) = &im.feature_map {
            if r.dim as usize > dim {
                return Err(Error::DimensionMismatch {
                    what: "feature raster dim",
                    expected: dim,
                    got: r.dim as usize,
                });
            }
        }
    }
    let order = rank_images_by_proximity(&Point3::origin(), images);
    let mut rng = match strategy {
        SelectionStrategy::Random(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut scratch = vec![0.0; dim];
    let mut visible = Vec::with_capacity(images.len());
    for (i, p) in points.iter().enumerate() {
        let row = out.row_mut(i);
        match strategy {
            SelectionStrategy::Complement => {
                if !order.iter().any(|&k| view_feature(&images[k], p, dim, row).is_some()) {
                    row.fill(1.0);
                }
            }
            SelectionStrategy::Mean => {
                let mut count = 0usize;
                for im in images {
                    if view_feature(im, p, dim, &mut scratch).is_some() {
                        row.iter_mut().zip(&scratch).for_each(|(r, s)| *r += s);
                        count += 1;
                    }
                }
                if count == 0 {
                    row.fill(1.0);
                } else {
                    row.iter_mut().for_each(|r| *r /= count as f64);
                }
            }
            SelectionStrategy::Random(_) => {
                visible.clear();
                visible.extend((0..images.len()).filter(|&k| images[k].camera.project(p).is_some()));
                if visible.is_empty() {
                    row.fill(1.0);
                } else {
                    let pick = visible[rng.as_mut().unwrap().random_range(0..visible.len())];
                    view_feature(&images[pick], p, dim, row);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, RigidTransform};
    use crate::io::raster::FeatureRaster;
    use nalgebra::Vector3;

    fn camera_at(center: Vector3<f64>) -> CameraModel {
        // looks along +z from `center`
        let ext = RigidTransform::from_translation(-center);
        CameraModel::new(CameraModel::pinhole(10.0, 10.0, 5.0, 5.0), ext, 10, 10).unwrap()
    }

    fn constant_raster(value: f32, dim: u32) -> FeatureRaster {
        FeatureRaster::new(10, 10, dim, vec![value; 100 * dim as usize]).unwrap()
    }

    fn image(center: Vector3<f64>, value: f32) -> PosedImage {
        PosedImage::new(RgbImage::new(10, 10), camera_at(center), Some(constant_raster(value, 4))).unwrap()
    }

    #[test]
    fn ranking_matches_sort_oracle() {
        let imgs = vec![
            image(Vector3::new(0.0, 0.0, -2.0), 0.0),
            image(Vector3::new(0.0, 0.0, -1.0), 0.0),
            image(Vector3::new(1.0, 0.0, 0.0), 0.0),
        ];
        assert_eq!(rank_images_by_proximity(&Point3::origin(), &imgs), vec![1, 2, 0]);
        assert_eq!(rank_images_by_proximity(&Point3::origin(), &imgs[..1]), vec![0]);
        let centers: Vec<f64> = imgs.iter().map(|i| i.camera.center().coords.norm()).collect();
        let mut oracle: Vec<usize> = (0..3).collect();
        oracle.sort_by(|&a, &b| centers[a].partial_cmp(&centers[b]).unwrap());
        assert_eq!(rank_images_by_proximity(&Point3::origin(), &imgs), oracle);
    }

    #[test]
    fn complement_takes_closest_visible_view() {
        // second camera is closer, first one sees the point from further back
        let near = image(Vector3::new(0.0, 0.0, -1.0), 2.0);
        let far = image(Vector3::new(0.0, 0.0, -3.0), 5.0);
        let p = Point3::new(0.0, 0.0, 1.0);
        let f = pixelwise_features(&[p], &[far.clone(), near.clone()], SelectionStrategy::Complement, 8).unwrap();
        assert_eq!(f.row(0), &[2.0, 2.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        // a point behind the near camera but in front of the far one
        let q = Point3::new(0.0, 0.0, -2.0);
        let f = pixelwise_features(&[q], &[far, near], SelectionStrategy::Complement, 8).unwrap();
        assert_eq!(f.row(0)[0], 5.0);
    }

    #[test]
    fn mean_of_two_views() {
        let a = image(Vector3::new(0.0, 0.0, -1.0), 2.0);
        let b = image(Vector3::new(0.0, 0.0, -3.0), 5.0);
        let f = pixelwise_features(&[Point3::new(0.0, 0.0, 1.0)], &[a, b], SelectionStrategy::Mean, 4).unwrap();
        assert_eq!(f.row(0), &[3.5; 4]);
    }

    #[test]
    fn invisible_points_get_ones() {
        let imgs = vec![image(Vector3::new(0.0, 0.0, -1.0), 2.0)];
        let behind = Point3::new(0.0, 0.0, -5.0);
        for s in [SelectionStrategy::Complement, SelectionStrategy::Mean, SelectionStrategy::Random(7)] {
            let f = pixelwise_features(&[behind], &imgs, s, 128).unwrap();
            assert_eq!(f.row(0), &[1.0; 128][..]);
            assert!(f.is_valid(0));
        }
        let f = pixelwise_features(&[behind, Point3::origin()], &[], SelectionStrategy::Mean, 128).unwrap();
        assert!(f.row(1).iter().all(|&v| v == 1.0));
        assert!(!f.is_valid(0) && !f.is_valid(1));
    }

    #[test]
    fn random_is_seeded_and_picks_a_visible_view() {
        let imgs = vec![
            image(Vector3::new(0.0, 0.0, -1.0), 2.0),
            image(Vector3::new(0.0, 0.0, -3.0), 5.0),
        ];
        let pts: Vec<_> = (0..50).map(|i| Point3::new(0.0, 0.0, 1.0 + i as f64 * 0.01)).collect();
        let a = pixelwise_features(&pts, &imgs, SelectionStrategy::Random(3), 4).unwrap();
        let b = pixelwise_features(&pts, &imgs, SelectionStrategy::Random(3), 4).unwrap();
        assert_eq!(a, b);
        let firsts: Vec<f64> = (0..50).map(|i| a.row(i)[0]).collect();
        assert!(firsts.iter().all(|&v| v == 2.0 || v == 5.0));
        assert!(firsts.contains(&2.0) && firsts.contains(&5.0));
    }

    #[test]
    fn color_descriptor_without_raster() {
        let mut im = image(Vector3::new(0.0, 0.0, -1.0), 0.0);
        im.feature_map = None;
        im.pixels = RgbImage::from_fn(10, 10, |x, _| [(x * 20) as u8, 100, 0]);
        let f = pixelwise_features(&[Point3::new(0.0, 0.0, 1.0)], &[im.clone()], SelectionStrategy::Complement, 128).unwrap();
        let d = local_color_descriptor(&im.pixels, 5, 5);
        assert_eq!(&f.row(0)[..COLOR_RAW_DIM], &d[..]);
        assert!((d[0] - 100.0 / 255.0).abs() < 1e-12);
        assert!((d[3] - 100.0 / 255.0).abs() < 1e-12);
        // horizontal ramp: all gradient mass in the 0-angle bin
        assert!(d[9] > 0.0 && d[10..].iter().all(|&v| v == 0.0));
        assert!(f.row(0)[COLOR_RAW_DIM..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_raster_rejected() {
        let im = PosedImage::new(
            RgbImage::new(10, 10),
            camera_at(Vector3::zeros()),
            Some(constant_raster(1.0, 200)),
        )
        .unwrap();
        assert!(pixelwise_features(&[Point3::origin()], &[im], SelectionStrategy::Mean, 128).is_err());
    }
}
