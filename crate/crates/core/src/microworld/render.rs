//! Pinhole rendering of sphere scenes with a z-buffer.
//!
//! Each object is rasterised over the bounding box of its exact silhouette and
//! every candidate pixel runs a ray–sphere intersection through the pixel
//! centre. Depth is z-depth (distance along the optical axis), meters.

use serde::{Deserialize, Serialize};

use super::geometry::{CameraPose, Vec3};
use super::scene::Scene;
use crate::encoding::{ByteReader, ByteWriter, DecodeError};
use crate::grid::Grid;

pub const DEFAULT_RESOLUTION: usize = 32;
const HIT_EPS: f64 = 1e-9;

/// Image size plus horizontal field of view. Pixels are square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
}

impl Intrinsics {
    pub fn new(width: usize, height: usize, fov_deg: f64) -> Self {
        Self {
            width,
            height,
            fov_deg,
        }
    }

    pub fn for_camera(cam: &CameraPose) -> Self {
        Self::new(DEFAULT_RESOLUTION, DEFAULT_RESOLUTION, cam.fov_deg())
    }

    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Ray through the pixel centre with unit z component, so the ray
    /// parameter equals z-depth.
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vec3 {
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        Vec3::new(
            (col as f64 + 0.5 - cx) / f,
            (row as f64 + 0.5 - cy) / f,
            1.0,
        )
    }

    /// Continuous image coordinates `(u, v)` of a camera-frame point with z > 0.
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        (f * p.x / p.z + cx, f * p.y / p.z + cy)
    }

    /// Inverse of a pixel-centre projection at z-depth `depth`.
    pub fn back_project(&self, row: usize, col: usize, depth: f64) -> Vec3 {
        self.pixel_ray(row, col) * depth
    }
}

/// Symbolic image: object ids plus metric depth per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRender {
    pub ids: Grid<u32>,
    pub depth: Grid<f64>,
}

impl ViewRender {
    pub fn width(&self) -> usize {
        self.ids.width()
    }

    pub fn height(&self) -> usize {
        self.ids.height()
    }

    /// Distinct nonzero ids in ascending order.
    pub fn visible_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.ids.cells().iter().copied().filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn pixel_count(&self, id: u32) -> usize {
        self.ids.cells().iter().filter(|&&i| i == id).count()
    }

    pub fn to_depth_map(&self) -> DepthMap {
        DepthMap {
            grid: self.depth.clone(),
            valid: self.ids.map(|&i| i != 0),
        }
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        w.u32(self.width() as u32).u32(self.height() as u32);
        for &id in self.ids.cells() {
            w.u32(id);
        }
        for &d in self.depth.cells() {
            w.f64(d);
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let (w, h) = read_dims(r)?;
        let ids = (0..w * h).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let depth = (0..w * h).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Ok(ViewRender {
            ids: Grid::from_cells(w, h, ids).unwrap(),
            depth: Grid::from_cells(w, h, depth).unwrap(),
        })
    }

    /// Standalone binary file: header + row-major grids.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GRID_MAGIC).u16(GRID_VERSION).u8(KIND_VIEW);
        self.encode(&mut w);
        w.finish()
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(bytes);
        read_grid_header(&mut r, KIND_VIEW)?;
        let v = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(v)
    }

    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "width": self.width(),
            "height": self.height(),
            "ids": rows(&self.ids),
            "depth": rows(&self.depth),
        })
    }
}

/// Per-pixel metric depth with a validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub grid: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.cells().iter().filter(|&&v| v).count()
    }

    /// Shape agreement and finite, non-negative values on valid pixels.
    pub fn is_well_formed(&self) -> bool {
        self.grid.same_shape(&self.valid)
            && self
                .grid
                .cells()
                .iter()
                .zip(self.valid.cells())
                .all(|(d, &v)| !v || (d.is_finite() && *d >= 0.0))
    }

    pub fn encode(&self, w: &mut ByteWriter) {
        w.u32(self.width() as u32).u32(self.height() as u32);
        for &d in self.grid.cells() {
            w.f64(d);
        }
        for &v in self.valid.cells() {
            w.u8(v as u8);
        }
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<Self, DecodeError> {
        let (w, h) = read_dims(r)?;
        let grid = (0..w * h).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let valid = (0..w * h)
            .map(|_| match r.u8()? {
                0 => Ok(false),
                1 => Ok(true),
                b => Err(DecodeError::Invalid(format!("mask byte {b}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DepthMap {
            grid: Grid::from_cells(w, h, grid).unwrap(),
            valid: Grid::from_cells(w, h, valid).unwrap(),
        })
    }

    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GRID_MAGIC).u16(GRID_VERSION).u8(KIND_DEPTH);
        self.encode(&mut w);
        w.finish()
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(bytes);
        read_grid_header(&mut r, KIND_DEPTH)?;
        let d = Self::decode(&mut r)?;
        r.expect_end()?;
        Ok(d)
    }

    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "width": self.width(),
            "height": self.height(),
            "depth": rows(&self.grid),
            "valid": rows(&self.valid),
        })
    }
}

const GRID_MAGIC: &[u8; 4] = b"CUGR";
const GRID_VERSION: u16 = 1;
const KIND_VIEW: u8 = 1;
const KIND_DEPTH: u8 = 2;
const MAX_DIM: usize = 4096;

fn read_dims(r: &mut ByteReader<'_>) -> Result<(usize, usize), DecodeError> {
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    if w == 0 || h == 0 || w > MAX_DIM || h > MAX_DIM {
        return Err(DecodeError::Invalid(format!("grid dims {w}x{h}")));
    }
    Ok((w, h))
}

fn read_grid_header(r: &mut ByteReader<'_>, kind: u8) -> Result<(), DecodeError> {
    if r.take(4)? != GRID_MAGIC {
        return Err(DecodeError::Magic);
    }
    let v = r.u16()?;
    if v != GRID_VERSION {
        return Err(DecodeError::Version(v));
    }
    let k = r.u8()?;
    if k != kind {
        return Err(DecodeError::Invalid(format!("grid kind {k}")));
    }
    Ok(())
}

fn rows<T: Clone + Serialize>(g: &Grid<T>) -> Vec<Vec<T>> {
    g.cells().chunks(g.width()).map(|r| r.to_vec()).collect()
}

/// Nearest positive z-depth at which `ray` (origin at the camera) meets the
/// sphere, if any.
pub fn ray_sphere_depth(ray: &Vec3, center: &Vec3, radius: f64) -> Option<f64> {
    let a = ray.dot(ray);
    let b = -2.0 * ray.dot(center);
    let c = center.dot(center) - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let near = (-b - sq) / (2.0 * a);
    if near > HIT_EPS {
        return Some(near);
    }
    let far = (-b + sq) / (2.0 * a);
    (far > HIT_EPS).then_some(far)
}

/// Range of `x/z` over the silhouette of a sphere lying entirely in front of
/// the camera, from the two tangent planes through the optical centre.
fn silhouette_slopes(lateral: f64, z: f64, radius: f64) -> (f64, f64) {
    let denom = z * z - radius * radius;
    let root = radius * (lateral * lateral + denom).sqrt();
    ((lateral * z - root) / denom, (lateral * z + root) / denom)
}

fn pixel_span(lo_slope: f64, hi_slope: f64, focal: f64, centre: f64, n: usize) -> (usize, usize) {
    let lo = (focal * lo_slope + centre - 0.5).floor() - 1.0;
    let hi = (focal * hi_slope + centre - 0.5).ceil() + 1.0;
    let hi = hi.min(n as f64 - 1.0);
    if hi < 0.0 || hi < lo {
        // Empty inclusive range.
        return (1, 0);
    }
    (lo.max(0.0) as usize, hi as usize)
}

pub fn render_view(scene: &Scene, cam: &CameraPose) -> ViewRender {
    render_view_sized(scene, cam, DEFAULT_RESOLUTION, DEFAULT_RESOLUTION)
}

pub fn render_view_sized(scene: &Scene, cam: &CameraPose, width: usize, height: usize) -> ViewRender {
    let intr = Intrinsics::new(width, height, cam.fov_deg());
    let focal = intr.focal();
    let (cx, cy) = intr.principal_point();
    let mut ids = Grid::filled(width, height, 0u32);
    let mut zbuf = Grid::filled(width, height, f64::INFINITY);

    for obj in scene.objects() {
        let p = cam.world_to_camera(&obj.center());
        let r = obj.radius;
        if p.z + r <= HIT_EPS {
            continue;
        }
        let (rows, cols) = if p.z - r > 1e-6 {
            let (x0, x1) = silhouette_slopes(p.x, p.z, r);
            let (y0, y1) = silhouette_slopes(p.y, p.z, r);
            (
                pixel_span(y0, y1, focal, cy, height),
                pixel_span(x0, x1, focal, cx, width),
            )
        } else {
            ((0, height - 1), (0, width - 1))
        };
        for row in rows.0..=rows.1 {
            for col in cols.0..=cols.1 {
                let ray = intr.pixel_ray(row, col);
                if let Some(t) = ray_sphere_depth(&ray, &p, r) {
                    if t < *zbuf.get(row, col) {
                        zbuf.set(row, col, t);
                        ids.set(row, col, obj.id);
                    }
                }
            }
        }
    }

    let depth = zbuf.map(|&z| if z.is_finite() { z } else { 0.0 });
    ViewRender { ids, depth }
}

pub fn render_depth(scene: &Scene, cam: &CameraPose) -> DepthMap {
    render_view(scene, cam).to_depth_map()
}
