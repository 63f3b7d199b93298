//! Image patches around superpoints and their deterministic descriptors.

use super::{normalize, PosedImage, PATCH_SIZE};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::sampling::radius_neighbors;

const GRID: usize = 8;
const HIST_LEVELS: usize = 4;
const GRID_DIM: usize = 3 * GRID * GRID;
const HIST_DIM: usize = HIST_LEVELS * HIST_LEVELS * HIST_LEVELS;

/// Inclusive pixel bounding box in one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    fn include(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.y0 = self.y0.min(y);
        self.x1 = self.x1.max(x);
        self.y1 = self.y1.max(y);
    }
}

/// Square RGB raster with channels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRaster {
    pub size: usize,
    pub data: Vec<[f64; 3]>,
}

impl PatchRaster {
    pub fn uniform(size: usize, rgb: [f64; 3]) -> Self {
        Self {
            size,
            data: vec![rgb; size * size],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.size + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub image_index: usize,
    pub bbox: PixelBox,
    pub raster: PatchRaster,
}

/// Index of the largest-area box, ties to the lower index.
pub(crate) fn largest_box(boxes: &[Option<PixelBox>]) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (k, b) in boxes.iter().enumerate() {
        if let Some(b) = b {
            if best.map_or(true, |(_, a)| b.area() > a) {
                best = Some((k, b.area()));
            }
        }
    }
    best.map(|(k, _)| k)
}

fn crop_resize(image: &PosedImage, b: &PixelBox, size: usize) -> PatchRaster {
    let img = &image.pixels;
    let sx = b.width() as f64 / size as f64;
    let sy = b.height() as f64 / size as f64;
    let mut data = Vec::with_capacity(size * size);
    for oy in 0..size {
        let fy = (b.y0 as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(b.y0 as f64, b.y1 as f64);
        for ox in 0..size {
            let fx = (b.x0 as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(b.x0 as f64, b.x1 as f64);
            let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
            let (x1, y1) = ((x0 + 1).min(b.x1 as u32), (y0 + 1).min(b.y1 as u32));
            let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
            let (c00, c10, c01, c11) = (img.get_f64(x0, y0), img.get_f64(x1, y0), img.get_f64(x0, y1), img.get_f64(x1, y1));
            let mut px = [0.0; 3];
            for k in 0..3 {
                let top = c00[k] * (1.0 - ax) + c10[k] * ax;
                let bottom = c01[k] * (1.0 - ax) + c11[k] * ax;
                px[k] = top * (1.0 - ay) + bottom * ay;
            }
            data.push(px);
        }
    }
    PatchRaster { size, data }
}

/// Projects `center` and its radius neighborhood in `cloud` into every image,
/// picks the image whose bounding box of visible projections has the largest
/// pixel area, and bilinearly resamples that box to 64×64.
pub fn extract_patch(center: &Point3, cloud: &[Point3], images: &[PosedImage], radius: f64) -> Result<Option<ImagePatch>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument("patch radius must be positive".into()));
    }
    let mut hood: Vec<Point3> = radius_neighbors(center, cloud, radius).into_iter().map(|i| cloud[i]).collect();
    hood.push(*center);
    let boxes: Vec<Option<PixelBox>> = images
        .iter()
        .map(|im| {
            let mut bbox: Option<PixelBox> = None;
            for p in &hood {
                if let Some(px) = im.camera.project(p) {
                    let (x, y) = px.pixel();
                    match &mut bbox {
                        Some(b) => b.include(x, y),
                        None => bbox = Some(PixelBox { x0: x, y0: y, x1: x, y1: y }),
                    }
                }
            }
            bbox
        })
        .collect();
    Ok(largest_box(&boxes).map(|k| {
        let bbox = boxes[k].unwrap();
        ImagePatch {
            image_index: k,
            bbox,
            raster: crop_resize(&images[k], &bbox, PATCH_SIZE),
        }
    }))
}

fn ycbcr(c: [f64; 3]) -> [f64; 3] {
    let y = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
    let cb = 0.5 - 0.168736 * c[0] - 0.331264 * c[1] + 0.5 * c[2];
    let cr = 0.5 + 0.5 * c[0] - 0.418688 * c[1] - 0.081312 * c[2];
    [y, cb, cr]
}

/// Block-averaged YCbCr grid (3×8×8) and a 64-bin joint RGB histogram,
/// each L2-normalized, concatenated, normalized again and zero padded to `dim`.
pub fn patch_descriptor(patch: &PatchRaster, dim: usize) -> Result<Vec<f64>> {
    if patch.size < GRID || patch.data.len() != patch.size * patch.size {
        return Err(Error::DegenerateInput("patch raster must be square and at least 8×8"));
    }
    if dim < GRID_DIM + HIST_DIM {
        return Err(Error::DimensionMismatch {
            what: "patch descriptor dim",
            expected: GRID_DIM + HIST_DIM,
            got: dim,
        });
    }
    let mut grid = vec![0.0; GRID_DIM];
    let mut counts = vec![0usize; GRID * GRID];
    let mut hist = vec![0.0; HIST_DIM];
    let bin = |v: f64| ((v * HIST_LEVELS as f64) as usize).min(HIST_LEVELS - 1);
    for y in 0..patch.size {
        for x in 0..patch.size {
            let c = patch.get(x, y);
            let cell = (y * GRID / patch.size) * GRID + x * GRID / patch.size;
            let ycc = ycbcr(c);
            for k in 0..3 {
                grid[k * GRID * GRID + cell] += ycc[k];
            }
            counts[cell] += 1;
            hist[(bin(c[0]) * HIST_LEVELS + bin(c[1])) * HIST_LEVELS + bin(c[2])] += 1.0;
        }
    }
    for k in 0..3 {
        for cell in 0..GRID * GRID {
            grid[k * GRID * GRID + cell] /= counts[cell] as f64;
        }
    }
    normalize(&mut grid);
    normalize(&mut hist);
    let mut out = grid;
    out.extend(hist);
    normalize(&mut out);
    out.resize(dim, 0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, RigidTransform};
    use crate::io::ppm::RgbImage;
    use nalgebra::Vector3;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    fn camera(center: Vector3<f64>, f: f64) -> PosedImage {
        let ext = RigidTransform::from_translation(-center);
        let cam = CameraModel::new(CameraModel::pinhole(f, f, 50.0, 50.0), ext, 100, 100).unwrap();
        let img = RgbImage::from_fn(100, 100, |x, y| [(x * 2) as u8, (y * 2) as u8, 128]);
        PosedImage::new(img, cam, None).unwrap()
    }

    #[test]
    fn gray_patches_coincide() {
        let a = patch_descriptor(&PatchRaster::uniform(64, [0.5; 3]), 256).unwrap();
        let b = patch_descriptor(&PatchRaster::uniform(64, [0.5; 3]), 256).unwrap();
        assert_eq!(a, b);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn black_and_white_separate() {
        let black = patch_descriptor(&PatchRaster::uniform(64, [0.0; 3]), 256).unwrap();
        let white = patch_descriptor(&PatchRaster::uniform(64, [1.0; 3]), 256).unwrap();
        assert!(dist(&black, &white) > 0.5);
    }

    #[test]
    fn largest_area_wins() {
        let small = PixelBox { x0: 0, y0: 0, x1: 19, y1: 19 };
        let large = PixelBox { x0: 5, y0: 5, x1: 44, y1: 34 };
        assert_eq!(small.area(), 400);
        assert_eq!(large.area(), 1200);
        assert_eq!(largest_box(&[Some(small), Some(large)]), Some(1));
        assert_eq!(largest_box(&[Some(large), None, Some(large)]), Some(0));
        assert_eq!(largest_box(&[None, None]), None);
    }

    #[test]
    fn selects_the_only_seeing_image() {
        let cloud: Vec<Point3> = (0..25)
            .map(|i| Point3::new((i % 5) as f64 * 0.02, (i / 5) as f64 * 0.02, 1.0))
            .collect();
        let center = Point3::new(0.04, 0.04, 1.0);
        let away = camera(Vector3::new(0.0, 0.0, 3.0), 80.0);
        let seeing = camera(Vector3::new(0.0, 0.0, 0.0), 80.0);
        let patch = extract_patch(&center, &cloud, &[away.clone(), seeing.clone()], 0.1).unwrap().unwrap();
        assert_eq!(patch.image_index, 1);
        assert_eq!(patch.raster.size, 64);
        assert!(extract_patch(&center, &cloud, &[away], 0.1).unwrap().is_none());
        // closer camera covers more pixels
        let zoomed = camera(Vector3::new(0.0, 0.0, 0.5), 80.0);
        let p = extract_patch(&center, &cloud, &[seeing, zoomed], 0.1).unwrap().unwrap();
        assert_eq!(p.image_index, 1);
    }

    #[test]
    fn extraction_is_deterministic() {
        let cloud: Vec<Point3> = (0..25)
            .map(|i| Point3::new((i % 5) as f64 * 0.05, (i / 5) as f64 * 0.05, 1.0))
            .collect();
        let im = camera(Vector3::zeros(), 80.0);
        let a = extract_patch(&cloud[12], &cloud, &[im.clone()], 0.2).unwrap().unwrap();
        let b = extract_patch(&cloud[12], &cloud, &[im], 0.2).unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(patch_descriptor(&a.raster, 256).unwrap(), patch_descriptor(&b.raster, 256).unwrap());
    }

    #[test]
    fn bilinear_resize_of_ramp_stays_in_box() {
        let im = camera(Vector3::zeros(), 80.0);
        let b = PixelBox { x0: 10, y0: 20, x1: 41, y1: 51 };
        let r = crop_resize(&im, &b, 64);
        let lo = 20.0 / 255.0;
        let hi = 82.0 / 255.0;
        for px in &r.data {
            assert!(px[0] >= lo - 1e-12 && px[0] <= hi + 1e-12);
        }
        // halfway along x
        assert!((r.get(32, 0)[0] - (2.0 * (10.0 + 32.5 * 0.5 - 0.5)) / 255.0).abs() < 1e-9);
    }
}
