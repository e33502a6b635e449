//! Scalar volumes: synthetic phantoms, trilinear sampling, reslicing and the
//! `SPVOL1` file format.
//!
//! Physical coordinates are millimetres with the origin at the centre of
//! voxel `(0, 0, 0)`, so voxel `(i, j, k)` sits at `(i, j, k) * spacing`.
//! Planes through the corner of the grid are never ground truth, which keeps
//! every target tangent point away from the degenerate origin.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{expect_eof, read_exact, read_f32s, read_f64, read_u32, write_f32s, write_f64, write_u32};
use crate::error::{Error, Result};
use crate::geom::{build_frame, PlaneFrame, TangentPoint, Vec3, R_MIN};
use crate::imaging::Image;

pub const VOLUME_MAGIC: &[u8; 6] = b"SPVOL1";
pub const DEFAULT_HEATMAP_SIGMA: f64 = 4.0;

/// Which scalar field of a volume to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    Intensity,
    Heatmap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: f64,
    voxels: Vec<f32>,
    landmarks: Vec<Vec3>,
    gt_tangent: TangentPoint,
    heatmap_sigma: f64,
    heatmap: Vec<f32>,
}

impl Volume {
    /// Assembles a volume and computes its landmark heatmap.
    pub fn from_parts(
        dims: [usize; 3],
        spacing: f64,
        voxels: Vec<f32>,
        landmarks: Vec<Vec3>,
        gt_tangent: TangentPoint,
        heatmap_sigma: f64,
    ) -> Result<Self> {
        check_grid(dims, spacing)?;
        let n = dims[0] * dims[1] * dims[2];
        if voxels.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: voxels.len(),
            });
        }
        if !(heatmap_sigma > 0.0) {
            return Err(Error::config("heatmap sigma must be positive"));
        }
        let heatmap = build_heatmap(dims, spacing, &landmarks, heatmap_sigma);
        Ok(Volume {
            dims,
            spacing,
            voxels,
            landmarks,
            gt_tangent,
            heatmap_sigma,
            heatmap,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn heatmap(&self) -> &[f32] {
        &self.heatmap
    }

    pub fn heatmap_sigma(&self) -> f64 {
        self.heatmap_sigma
    }

    pub fn landmarks(&self) -> &[Vec3] {
        &self.landmarks
    }

    pub fn gt_tangent(&self) -> TangentPoint {
        self.gt_tangent
    }

    /// Physical position of the last voxel centre along each axis.
    pub fn physical_max(&self) -> Vec3 {
        Vec3::new(
            (self.dims[0] - 1) as f64 * self.spacing,
            (self.dims[1] - 1) as f64 * self.spacing,
            (self.dims[2] - 1) as f64 * self.spacing,
        )
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let hi = self.physical_max();
        (0.0..=hi.x).contains(&p.x) && (0.0..=hi.y).contains(&p.y) && (0.0..=hi.z).contains(&p.z)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.voxels[self.index(i, j, k)]
    }

    fn grid(&self, grid: Grid) -> &[f32] {
        match grid {
            Grid::Intensity => &self.voxels,
            Grid::Heatmap => &self.heatmap,
        }
    }

    pub fn sample(&self, p: Vec3) -> f64 {
        self.sample_grid(Grid::Intensity, p)
    }

    pub fn sample_grid(&self, grid: Grid, p: Vec3) -> f64 {
        trilinear(self.grid(grid), self.dims, self.spacing, p)
    }

    pub fn reslice(&self, frame: &PlaneFrame, grid: Grid) -> Image {
        reslice(self, frame, grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_volume(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_volume(path)
    }
}

fn check_grid(dims: [usize; 3], spacing: f64) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::config(format!("grid dimensions must be positive, got {dims:?}")));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::config(format!("spacing must be positive, got {spacing}")));
    }
    Ok(())
}

/// Trilinear interpolation; anything outside the grid reads as 0.
pub fn trilinear(grid: &[f32], dims: [usize; 3], spacing: f64, p: Vec3) -> f64 {
    let f = [p.x / spacing, p.y / spacing, p.z / spacing];
    let mut base = [0usize; 3];
    let mut next = [0usize; 3];
    let mut t = [0.0f64; 3];
    for a in 0..3 {
        let hi = (dims[a] - 1) as f64;
        if !(f[a] >= 0.0 && f[a] <= hi) {
            return 0.0;
        }
        let i0 = (f[a].floor() as usize).min(dims[a] - 1);
        base[a] = i0;
        next[a] = (i0 + 1).min(dims[a] - 1);
        t[a] = f[a] - i0 as f64;
    }
    let at = |i: usize, j: usize, k: usize| grid[i + dims[0] * (j + dims[1] * k)] as f64;
    let c00 = at(base[0], base[1], base[2]) * (1.0 - t[0]) + at(next[0], base[1], base[2]) * t[0];
    let c10 = at(base[0], next[1], base[2]) * (1.0 - t[0]) + at(next[0], next[1], base[2]) * t[0];
    let c01 = at(base[0], base[1], next[2]) * (1.0 - t[0]) + at(next[0], base[1], next[2]) * t[0];
    let c11 = at(base[0], next[1], next[2]) * (1.0 - t[0]) + at(next[0], next[1], next[2]) * t[0];
    let c0 = c00 * (1.0 - t[1]) + c10 * t[1];
    let c1 = c01 * (1.0 - t[1]) + c11 * t[1];
    c0 * (1.0 - t[2]) + c1 * t[2]
}

pub fn sample_trilinear(vol: &Volume, p: Vec3) -> f64 {
    vol.sample(p)
}

/// Samples `grid` on the `extent x extent` lattice of `frame`.
pub fn reslice(vol: &Volume, frame: &PlaneFrame, grid: Grid) -> Image {
    let field = vol.grid(grid);
    Image::from_fn(frame.extent, frame.extent, |i, j| {
        trilinear(field, vol.dims, vol.spacing, frame.pixel_position(i, j))
    })
}

/// Gaussian kernel value of a single landmark.
pub fn heatmap_kernel(distance_sq: f64, sigma: f64) -> f64 {
    (-distance_sq / (2.0 * sigma * sigma)).exp()
}

/// Max-merged Gaussian landmark heatmap sampled at every voxel centre.
pub fn build_heatmap(dims: [usize; 3], spacing: f64, landmarks: &[Vec3], sigma: f64) -> Vec<f32> {
    let n = dims[0] * dims[1] * dims[2];
    let mut out = vec![0.0f32; n];
    if landmarks.is_empty() {
        return out;
    }
    let mut idx = 0;
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let p = Vec3::new(i as f64, j as f64, k as f64) * spacing;
                let nearest = landmarks
                    .iter()
                    .map(|l| (p - *l).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                out[idx] = heatmap_kernel(nearest, sigma) as f32;
                idx += 1;
            }
        }
    }
    out
}

/// Sum of heatmap values over the reslice of plane `p`.
pub fn plane_heatmap_sum(vol: &Volume, p: &TangentPoint, pixel_pitch: f64, extent: usize) -> f64 {
    let frame = build_frame(p, pixel_pitch, extent);
    reslice(vol, &frame, Grid::Heatmap).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub seed: u64,
    pub dims: [usize; 3],
    /// mm per voxel, isotropic
    pub spacing: f64,
    pub landmark_count: usize,
    /// degrees
    pub rotation_range: f64,
    pub noise_level: f64,
    /// mm
    pub heatmap_sigma: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            seed: 0,
            dims: [64, 64, 64],
            spacing: 1.0,
            landmark_count: 5,
            rotation_range: 15.0,
            noise_level: 0.1,
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        check_grid(self.dims, self.spacing)?;
        if self.landmark_count < 3 {
            return Err(Error::config("landmark_count must be at least 3"));
        }
        if !(0.0..=180.0).contains(&self.rotation_range) {
            return Err(Error::config("rotation_range must lie in [0, 180] degrees"));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::config("noise_level must be non-negative"));
        }
        if !(self.heatmap_sigma > 0.0) {
            return Err(Error::config("heatmap_sigma must be positive"));
        }
        Ok(())
    }
}

/// Row-major 3x3 rotation.
#[derive(Clone, Copy, Debug)]
struct Rotation([[f64; 3]; 3]);

impl Rotation {
    /// Rodrigues formula for a unit axis.
    fn axis_angle(axis: Vec3, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let Vec3 { x, y, z } = axis;
        Rotation([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    fn apply_inverse(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }
}

struct Lobe {
    centre: Vec3,
    radius: f64,
    amplitude: f64,
}

/// Organ layout in its local frame, where the ground-truth plane is `z = 0`.
struct Organ {
    centre: Vec3,
    semi_axes: Vec3,
    lobes: Vec<Lobe>,
}

impl Organ {
    fn intensity(&self, local: Vec3) -> f64 {
        let e = local - self.centre;
        let q = Vec3::new(
            e.x / self.semi_axes.x,
            e.y / self.semi_axes.y,
            e.z / self.semi_axes.z,
        );
        let rho = q.norm();
        // layered surrounding tissue, brighter towards the organ's top side
        let mut v = 0.45 + 0.35 * (local.z / 12.0).tanh();
        if rho < 1.0 {
            // depth cue: interior brightness varies across the organ's thickness
            v = 0.5 + 0.45 * q.z;
        }
        let shell = (rho - 1.0) / 0.08;
        v += 0.9 * (-shell * shell).exp();
        for lobe in &self.lobes {
            let d2 = (local - lobe.centre).norm_squared();
            v += lobe.amplitude * (-d2 / (2.0 * lobe.radius * lobe.radius)).exp();
        }
        v.clamp(0.0, 1.0)
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

const MAX_ROTATION_ATTEMPTS: usize = 1000;

/// Builds a deterministic phantom: an ellipsoidal organ with bright lobes
/// centred on its mid-plane, tilted about a pivot on the grid's z axis.
///
/// The tilt pivot lies on the z axis between 12% and 40% of the way up the
/// grid, so the ground-truth tangent point stays within a few tens of
/// millimetres of the grid corner for moderate rotation ranges, while its
/// height varies enough across phantoms to make the search non-trivial.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Volume> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s = cfg.spacing;
    let ext = Vec3::new(
        (cfg.dims[0] - 1) as f64 * s,
        (cfg.dims[1] - 1) as f64 * s,
        (cfg.dims[2] - 1) as f64 * s,
    );

    let pivot = Vec3::new(0.0, 0.0, ext.z * rng.gen_range(0.12..0.40));
    let centre = Vec3::new(
        ext.x * rng.gen_range(0.45..0.55),
        ext.y * rng.gen_range(0.45..0.55),
        0.0,
    );
    let semi_axes = Vec3::new(
        0.45 * ext.x * rng.gen_range(0.9..1.1),
        0.40 * ext.y * rng.gen_range(0.9..1.1),
        0.35 * ext.z * rng.gen_range(0.9..1.1),
    );
    let lobe_count = rng.gen_range(2..=4);
    let lobe_scale = 0.06 * ext.x.min(ext.y);
    let lobes: Vec<Lobe> = (0..lobe_count)
        .map(|_| {
            let psi = rng.gen_range(0.0..std::f64::consts::TAU);
            let rho = rng.gen_range(0.2..0.55);
            Lobe {
                centre: centre
                    + Vec3::new(rho * semi_axes.x * psi.cos(), rho * semi_axes.y * psi.sin(), 0.0),
                radius: lobe_scale * rng.gen_range(0.8..1.2),
                amplitude: rng.gen_range(0.4..0.7),
            }
        })
        .collect();

    // three rim points fix the plane, lobe centres and extra rim points follow
    let rim = |angle_deg: f64, frac: f64| {
        let a = angle_deg.to_radians();
        centre + Vec3::new(frac * semi_axes.x * a.cos(), frac * semi_axes.y * a.sin(), 0.0)
    };
    let mut local_landmarks = Vec::with_capacity(cfg.landmark_count);
    for base in [90.0, 210.0, 330.0] {
        local_landmarks.push(rim(base + rng.gen_range(-15.0..15.0), 0.6));
    }
    local_landmarks.extend(lobes.iter().map(|l| l.centre));
    let mut extra = 0usize;
    while local_landmarks.len() < cfg.landmark_count {
        local_landmarks.push(rim(30.0 + 47.0 * extra as f64, 0.4));
        extra += 1;
    }
    local_landmarks.truncate(cfg.landmark_count);

    let max_angle = cfg.rotation_range.to_radians();
    let mut accepted = None;
    for _ in 0..MAX_ROTATION_ATTEMPTS {
        let axis = random_unit(&mut rng);
        let angle = if max_angle > 0.0 {
            rng.gen_range(0.0..=max_angle)
        } else {
            0.0
        };
        let rot = Rotation::axis_angle(axis, angle);
        let mut normal = rot.apply(Vec3::Z);
        let mut d = normal.dot(pivot);
        if d < 0.0 {
            normal = -normal;
            d = -d;
        }
        if d < 10.0 * R_MIN {
            continue;
        }
        let world: Vec<Vec3> = local_landmarks.iter().map(|l| pivot + rot.apply(*l)).collect();
        let inside = world.iter().all(|p| {
            (0.0..=ext.x).contains(&p.x) && (0.0..=ext.y).contains(&p.y) && (0.0..=ext.z).contains(&p.z)
        });
        if inside {
            accepted = Some((rot, normal * d, world));
            break;
        }
    }
    let Some((rot, tangent, landmarks)) = accepted else {
        return Err(Error::config(
            "could not place the phantom inside the grid; reduce rotation_range",
        ));
    };
    let gt_tangent = TangentPoint::from_vec(tangent)?;

    let organ = Organ {
        centre,
        semi_axes,
        lobes,
    };
    let n = cfg.dims[0] * cfg.dims[1] * cfg.dims[2];
    let mut voxels = Vec::with_capacity(n);
    for k in 0..cfg.dims[2] {
        for j in 0..cfg.dims[1] {
            for i in 0..cfg.dims[0] {
                let p = Vec3::new(i as f64, j as f64, k as f64) * s;
                let local = rot.apply_inverse(p - pivot);
                let clean = organ.intensity(local);
                let speckle = 1.0 + cfg.noise_level * (2.0 * rng.gen::<f64>() - 1.0);
                voxels.push((clean * speckle).clamp(0.0, 1.0) as f32);
            }
        }
    }

    Volume::from_parts(cfg.dims, s, voxels, landmarks, gt_tangent, cfg.heatmap_sigma)
}

const MAX_VOXELS: usize = 1 << 30;
const MAX_LANDMARKS: usize = 1 << 20;

pub fn write_volume(vol: &Volume, mut w: impl Write) -> Result<()> {
    w.write_all(VOLUME_MAGIC)?;
    for d in vol.dims {
        write_u32(&mut w, d)?;
    }
    write_f64(&mut w, vol.spacing)?;
    write_u32(&mut w, vol.landmarks.len())?;
    for l in &vol.landmarks {
        for c in l.to_array() {
            write_f64(&mut w, c)?;
        }
    }
    for c in vol.gt_tangent.as_vec().to_array() {
        write_f64(&mut w, c)?;
    }
    write_f32s(&mut w, &vol.voxels)?;
    write_f64(&mut w, vol.heatmap_sigma)?;
    write_f32s(&mut w, &vol.heatmap)?;
    w.flush()?;
    Ok(())
}

pub fn read_volume(mut r: impl Read) -> Result<Volume> {
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic)?;
    if &magic != VOLUME_MAGIC {
        return Err(Error::format("not an SPVOL1 volume (bad magic)"));
    }
    let dims = [
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
    ];
    let spacing = read_f64(&mut r)?;
    check_grid(dims, spacing).map_err(|e| Error::format(e.to_string()))?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n <= MAX_VOXELS)
        .ok_or_else(|| Error::format("voxel count out of range"))?;
    let landmark_count = read_u32(&mut r)? as usize;
    if landmark_count > MAX_LANDMARKS {
        return Err(Error::format("landmark count out of range"));
    }
    let mut landmarks = Vec::with_capacity(landmark_count);
    for _ in 0..landmark_count {
        landmarks.push(Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?));
    }
    let t = Vec3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?);
    let gt_tangent =
        TangentPoint::from_vec(t).map_err(|e| Error::format(format!("ground truth: {e}")))?;
    let voxels = read_f32s(&mut r, n)?;
    let heatmap_sigma = read_f64(&mut r)?;
    let heatmap = read_f32s(&mut r, n)?;
    expect_eof(&mut r)?;
    Ok(Volume {
        dims,
        spacing,
        voxels,
        landmarks,
        gt_tangent,
        heatmap_sigma,
        heatmap,
    })
}

pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume(vol, BufWriter::new(File::create(path)?))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    read_volume(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg(seed: u64) -> PhantomConfig {
        PhantomConfig {
            seed,
            dims: [24, 24, 24],
            ..PhantomConfig::default()
        }
    }

    fn flat_volume(dims: [usize; 3], f: impl Fn(usize, usize, usize) -> f32) -> Volume {
        let mut voxels = Vec::new();
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    voxels.push(f(i, j, k));
                }
            }
        }
        let gt = TangentPoint::new(0.0, 0.0, 2.0).unwrap();
        Volume::from_parts(dims, 1.0, voxels, vec![], gt, 2.0).unwrap()
    }

    #[test]
    fn phantom_is_deterministic() {
        let a = generate_phantom(&small_cfg(11)).unwrap();
        let b = generate_phantom(&small_cfg(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&small_cfg(12)).unwrap();
        assert_ne!(a.voxels(), c.voxels());
    }

    #[test]
    fn phantom_with_three_landmarks_is_coplanar() {
        let cfg = PhantomConfig {
            landmark_count: 3,
            ..small_cfg(4)
        };
        let vol = generate_phantom(&cfg).unwrap();
        assert_eq!(vol.landmarks().len(), 3);
        let [a, b, c] = [vol.landmarks()[0], vol.landmarks()[1], vol.landmarks()[2]];
        let n = (b - a).cross(c - a);
        assert!(n.norm() > 1.0, "landmarks must not be collinear");
        let t = vol.gt_tangent();
        assert!(n.normalized().cross(t.as_vec().normalized()).norm() < 1e-9);
    }

    #[test]
    fn phantom_rejects_bad_config() {
        let mut cfg = small_cfg(1);
        cfg.dims = [0, 4, 4];
        assert!(matches!(generate_phantom(&cfg), Err(Error::Config(_))));
        let mut cfg = small_cfg(1);
        cfg.spacing = 0.0;
        assert!(matches!(generate_phantom(&cfg), Err(Error::Config(_))));
        let mut cfg = small_cfg(1);
        cfg.landmark_count = 2;
        assert!(generate_phantom(&cfg).is_err());
        let mut cfg = small_cfg(1);
        cfg.rotation_range = 200.0;
        assert!(generate_phantom(&cfg).is_err());
    }

    #[test]
    fn trilinear_lattice_midpoint_and_padding() {
        let vol = flat_volume([4, 4, 4], |i, j, k| (i + 2 * j + 3 * k) as f32 * 0.01);
        assert_eq!(vol.sample(Vec3::new(2.0, 1.0, 3.0)), vol.voxel(2, 1, 3) as f64);
        assert_eq!(vol.sample(Vec3::new(3.0, 3.0, 3.0)), vol.voxel(3, 3, 3) as f64);

        let two = flat_volume([2, 1, 1], |i, _, _| if i == 0 { 0.2 } else { 0.6 });
        assert!((two.sample(Vec3::new(0.5, 0.0, 0.0)) - 0.4).abs() < 1e-7);

        assert_eq!(vol.sample(Vec3::new(-10.0, 1.0, 1.0)), 0.0);
        assert_eq!(vol.sample(Vec3::new(1.0, 13.0, 1.0)), 0.0);
    }

    #[test]
    fn heatmap_examples() {
        let sigma = 2.0;
        let lm = vec![Vec3::new(3.0, 3.0, 3.0)];
        let h = build_heatmap([8, 8, 8], 1.0, &lm, sigma);
        let idx = |i: usize, j: usize, k: usize| i + 8 * (j + 8 * k);
        assert_eq!(h[idx(3, 3, 3)], 1.0);
        assert!((h[idx(5, 3, 3)] as f64 - (-0.5f64).exp()).abs() < 1e-6);

        let twice = build_heatmap([8, 8, 8], 1.0, &[lm[0], lm[0]], sigma);
        assert_eq!(h, twice);
        assert!(build_heatmap([4, 4, 4], 1.0, &[], sigma).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reslice_centre_matches_sample() {
        let vol = generate_phantom(&small_cfg(3)).unwrap();
        let p = TangentPoint::new(4.0, 6.0, 9.0).unwrap();
        let frame = build_frame(&p, 0.8, 21);
        let img = vol.reslice(&frame, Grid::Intensity);
        assert_eq!(img.get(10, 10), vol.sample(p.as_vec()));
        let heat = vol.reslice(&frame, Grid::Heatmap);
        assert_eq!(heat.get(10, 10), vol.sample_grid(Grid::Heatmap, p.as_vec()));
    }

    #[test]
    fn axis_aligned_reslice_matches_voxel_slab() {
        // plane z = 5 in an unrotated grid: u = -y, v = +x
        let vol = flat_volume([12, 12, 12], |i, j, k| ((i * 7 + j * 3 + k * 5) % 11) as f32 / 10.0);
        let p = TangentPoint::new(0.0, 0.0, 5.0).unwrap();
        let extent = 10;
        let img = vol.reslice(&build_frame(&p, 1.0, extent), Grid::Intensity);
        for jj in 0..extent {
            for ii in 0..extent {
                let x = jj as i64 - 5;
                let y = -(ii as i64 - 5);
                let expected = if (0..12).contains(&x) && (0..12).contains(&y) {
                    vol.voxel(x as usize, y as usize, 5) as f64
                } else {
                    0.0
                };
                assert_eq!(img.get(ii, jj), expected, "pixel ({ii}, {jj})");
            }
        }
    }

    #[test]
    fn heatmap_sum_prefers_ground_truth_plane() {
        let vol = generate_phantom(&PhantomConfig {
            dims: [48, 48, 48],
            ..PhantomConfig::default()
        })
        .unwrap();
        let gt = vol.gt_tangent();
        let offset = |mm: f64| {
            TangentPoint::from_vec(gt.as_vec() + gt.as_vec().normalized() * mm).unwrap()
        };
        let on = plane_heatmap_sum(&vol, &gt, 1.0, 96);
        let near = plane_heatmap_sum(&vol, &offset(5.0 * vol.heatmap_sigma()), 1.0, 96);
        let far = plane_heatmap_sum(&vol, &offset(10.0 * vol.heatmap_sigma()), 1.0, 96);
        assert!(on > near && on > far, "{on} {near} {far}");
        assert_eq!(on, plane_heatmap_sum(&vol, &gt, 1.0, 96));
    }

    #[test]
    fn heatmap_sum_without_landmarks_is_zero() {
        let vol = flat_volume([8, 8, 8], |_, _, _| 0.5);
        let p = TangentPoint::new(2.0, 2.0, 2.0).unwrap();
        assert_eq!(plane_heatmap_sum(&vol, &p, 1.0, 16), 0.0);
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let vol = generate_phantom(&small_cfg(9)).unwrap();
        let mut buf = Vec::new();
        write_volume(&vol, &mut buf).unwrap();
        assert_eq!(read_volume(&buf[..]).unwrap(), vol);

        let truncated = &buf[..buf.len() - 5];
        assert!(matches!(read_volume(truncated), Err(Error::Format(_))));
        assert!(matches!(read_volume(&buf[..3]), Err(Error::Format(_))));

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_volume(&bad[..]), Err(Error::Format(_))));

        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_volume(&extra[..]), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.spvol");
        let vol = generate_phantom(&small_cfg(2)).unwrap();
        vol.save(&path).unwrap();
        assert_eq!(Volume::load(&path).unwrap(), vol);
        assert!(matches!(
            Volume::load(dir.path().join("missing")),
            Err(Error::Io(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn trilinear_reproduces_affine_fields(
            a in prop::array::uniform3(-4i32..4),
            b in 16i32..48,
            p in prop::array::uniform3(0.0..9.0f64),
        ) {
            // coefficients in 1/128 steps keep every lattice value exact in f32
            let a = a.map(|c| c as f64 / 128.0);
            let b = b as f64 / 128.0;
            let f = |x: Vec3| a[0] * x.x + a[1] * x.y + a[2] * x.z + b;
            let mut voxels = Vec::new();
            for k in 0..10 {
                for j in 0..10 {
                    for i in 0..10 {
                        voxels.push(f(Vec3::new(i as f64, j as f64, k as f64)) as f32);
                    }
                }
            }
            let pt = Vec3::from_array(p);
            prop_assert!((trilinear(&voxels, [10, 10, 10], 1.0, pt) - f(pt)).abs() < 1e-9);
        }

        #[test]
        fn phantom_landmarks_on_plane(seed in 0u64..1000) {
            let vol = generate_phantom(&PhantomConfig { seed, dims: [20, 20, 20], ..PhantomConfig::default() }).unwrap();
            let t = vol.gt_tangent();
            prop_assert!(t.radius() >= R_MIN);
            for l in vol.landmarks() {
                prop_assert!(vol.contains(*l));
                prop_assert!(t.plane_residual(*l).abs() / t.radius() < 1e-6);
                let idx_val = vol.sample_grid(Grid::Heatmap, *l);
                prop_assert!(idx_val > 0.0);
            }
        }

        #[test]
        fn heatmap_kernel_positive_and_monotone(
            k in 0.0..30.0f64, dk in 1e-3..5.0f64, sigma in 0.5..10.0f64,
        ) {
            // distances in units of sigma, kept where exp() is representable
            let (d1, d2) = (k * sigma, (k + dk) * sigma);
            let near = heatmap_kernel(d1 * d1, sigma);
            let far = heatmap_kernel(d2 * d2, sigma);
            prop_assert!(near > 0.0 && near <= 1.0);
            prop_assert!(far > 0.0);
            prop_assert!(far <= near);
        }
    }

    #[test]
    fn heatmap_decreases_along_rays() {
        let vol = generate_phantom(&small_cfg(5)).unwrap();
        let l = vol.landmarks()[0];
        for dir in [Vec3::X, -Vec3::Y, Vec3::new(1.0, 1.0, -1.0).normalized()] {
            let mut prev = f64::INFINITY;
            for step in 0..40 {
                let p = l + dir * (step as f64 * 0.5);
                if !vol.contains(p) {
                    break;
                }
                let nearest = vol
                    .landmarks()
                    .iter()
                    .map(|m| (p - *m).norm_squared())
                    .fold(f64::INFINITY, f64::min);
                let v = heatmap_kernel(nearest, vol.heatmap_sigma());
                if nearest.sqrt() == (p - l).norm() {
                    assert!(v <= prev);
                    prev = v;
                }
            }
        }
        assert!(vol.heatmap().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
