//! C ABI for spagent: plane geometry, image metrics, volumes and trained
//! agents.
//!
//! Every fallible function returns an [`SpStatus`]; on failure the message
//! is kept per thread and can be read with [`sp_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spagent::agent::{load_checkpoint, Encoder, QNetwork};
use spagent::cli::Policy;
use spagent::env::{EnvConfig, Environment, NUM_ACTIONS};
use spagent::geom::{plane_metrics, plane_to_tangent, tangent_to_plane, Plane, TangentPoint, Vec3};
use spagent::imaging::{ncc, ssim, Image};
use spagent::volume::{generate_phantom, load_volume, save_volume, PhantomConfig, Volume};
use spagent::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullPointer = 1,
    DegeneratePoint = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Shape = 6,
    ZeroVariance = 7,
    Other = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SpStatus {
    match e {
        Error::DegeneratePoint { .. } => SpStatus::DegeneratePoint,
        Error::Config(_) | Error::IndivisibleFactor { .. } | Error::EmptyDemoSet => SpStatus::Config,
        Error::Io(_) => SpStatus::Io,
        Error::Format(_) => SpStatus::Format,
        Error::DimensionMismatch { .. } | Error::ShapeMismatch { .. } => SpStatus::Shape,
        Error::ZeroVariance => SpStatus::ZeroVariance,
        _ => SpStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SpStatus, String)>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SpStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            SpStatus::Panic
        }
    }
}

fn lib<T>(r: spagent::Result<T>) -> Result<T, (SpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (SpStatus, String) {
    (SpStatus::NullPointer, "null pointer argument".into())
}

unsafe fn read3(p: *const f64) -> Result<Vec3, (SpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn write3(p: *mut f64, v: Vec3) -> Result<(), (SpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    std::slice::from_raw_parts_mut(p, 3).copy_from_slice(&v.to_array());
    Ok(())
}

unsafe fn out<T>(p: *mut T, v: T) -> Result<(), (SpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    *p = v;
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, (SpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SpStatus::Config, "path is not valid UTF-8".into()))
}

unsafe fn image_arg(p: *const f64, width: usize, height: usize) -> Result<Image, (SpStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    let n = width
        .checked_mul(height)
        .ok_or((SpStatus::Shape, "image size overflows".to_string()))?;
    lib(Image::new(width, height, std::slice::from_raw_parts(p, n).to_vec()))
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`) and returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sp_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Plane `n . x = d` of a tangent point.
///
/// # Safety
/// `tangent` and `normal` point to 3 doubles; `d` to one.
#[no_mangle]
pub unsafe extern "C" fn sp_tangent_to_plane(tangent: *const f64, normal: *mut f64, d: *mut f64) -> SpStatus {
    guard(|| {
        let t = lib(TangentPoint::from_vec(read3(tangent)?))?;
        let p = tangent_to_plane(&t);
        write3(normal, p.normal)?;
        out(d, p.d)
    })
}

/// Tangent point of the plane `normal . x = d` (normal need not be unit).
///
/// # Safety
/// `normal` and `tangent` point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_plane_to_tangent(normal: *const f64, d: f64, tangent: *mut f64) -> SpStatus {
    guard(|| {
        let n = read3(normal)?;
        if !(n.norm() > 0.0) {
            return Err((SpStatus::DegeneratePoint, "zero normal".into()));
        }
        let t = lib(plane_to_tangent(&Plane::new(n, d / n.norm())))?;
        write3(tangent, t.as_vec())
    })
}

/// Angle (degrees) and distance difference (mm) between the planes of two
/// tangent points.
///
/// # Safety
/// `pred` and `gt` point to 3 doubles; `ang_deg` and `dis_mm` to one each.
#[no_mangle]
pub unsafe extern "C" fn sp_plane_metrics(pred: *const f64, gt: *const f64, ang_deg: *mut f64, dis_mm: *mut f64) -> SpStatus {
    guard(|| {
        let p = lib(TangentPoint::from_vec(read3(pred)?))?;
        let g = lib(TangentPoint::from_vec(read3(gt)?))?;
        let m = plane_metrics(&tangent_to_plane(&p), &tangent_to_plane(&g));
        out(ang_deg, m.ang_deg)?;
        out(dis_mm, m.dis_mm)
    })
}

/// Zero-normalized cross-correlation of two row-major images.
///
/// # Safety
/// `a` and `b` point to `width * height` doubles; `result` to one.
#[no_mangle]
pub unsafe extern "C" fn sp_ncc(a: *const f64, b: *const f64, width: usize, height: usize, result: *mut f64) -> SpStatus {
    guard(|| {
        let (a, b) = (image_arg(a, width, height)?, image_arg(b, width, height)?);
        out(result, lib(ncc(&a, &b))?)
    })
}

/// Structural similarity (11x11 Gaussian window, dynamic range 1).
///
/// # Safety
/// `a` and `b` point to `width * height` doubles; `result` to one.
#[no_mangle]
pub unsafe extern "C" fn sp_ssim(a: *const f64, b: *const f64, width: usize, height: usize, result: *mut f64) -> SpStatus {
    guard(|| {
        let (a, b) = (image_arg(a, width, height)?, image_arg(b, width, height)?);
        out(result, lib(ssim(&a, &b))?)
    })
}

/// Opaque volume handle.
pub struct SpVolume {
    inner: Volume,
}

/// Opaque handle to a trained network plus its observation settings.
pub struct SpAgent {
    net: QNetwork,
    encoder: Encoder,
    env: EnvConfig,
}

fn boxed<T>(slot: *mut *mut T, v: T) -> Result<(), (SpStatus, String)> {
    if slot.is_null() {
        return Err(null());
    }
    unsafe { *slot = Box::into_raw(Box::new(v)) };
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, (SpStatus, String)> {
    p.as_ref().ok_or_else(null)
}

/// Generates a phantom on a `grid`^3 lattice with 1 mm spacing and
/// default settings.
///
/// # Safety
/// `volume` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_generate(seed: u64, grid: usize, volume: *mut *mut SpVolume) -> SpStatus {
    guard(|| {
        let v = lib(generate_phantom(&PhantomConfig {
            seed,
            dims: [grid; 3],
            ..PhantomConfig::default()
        }))?;
        boxed(volume, SpVolume { inner: v })
    })
}

/// Loads an `SPVOL1` file.
///
/// # Safety
/// `path` is a NUL-terminated string; `volume` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_load(path: *const c_char, volume: *mut *mut SpVolume) -> SpStatus {
    guard(|| {
        let v = lib(load_volume(path_arg(path)?))?;
        boxed(volume, SpVolume { inner: v })
    })
}

/// Writes a volume as `SPVOL1`.
///
/// # Safety
/// `volume` is a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_save(volume: *const SpVolume, path: *const c_char) -> SpStatus {
    guard(|| lib(save_volume(&handle(volume)?.inner, path_arg(path)?)))
}

/// Releases a volume handle; null is ignored.
///
/// # Safety
/// `volume` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_free(volume: *mut SpVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Grid dimensions and the ground-truth tangent point.
///
/// # Safety
/// `dims` points to 3 `size_t`, `gt_tangent` to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_info(volume: *const SpVolume, dims: *mut usize, gt_tangent: *mut f64) -> SpStatus {
    guard(|| {
        let v = &handle(volume)?.inner;
        if dims.is_null() {
            return Err(null());
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&v.dims());
        write3(gt_tangent, v.gt_tangent().as_vec())
    })
}

/// Samples the plane of `tangent` on an `extent` x `extent` grid with
/// `pitch` mm pixels into `pixels` (row-major, raw intensities).
///
/// # Safety
/// `tangent` points to 3 doubles, `pixels` to `extent * extent` doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_volume_reslice(
    volume: *const SpVolume,
    tangent: *const f64,
    extent: usize,
    pitch: f64,
    pixels: *mut f64,
) -> SpStatus {
    guard(|| {
        let v = &handle(volume)?.inner;
        let t = lib(TangentPoint::from_vec(read3(tangent)?))?;
        if pixels.is_null() {
            return Err(null());
        }
        if extent == 0 || !(pitch > 0.0) {
            return Err((SpStatus::Config, "extent and pitch must be positive".into()));
        }
        let frame = spagent::geom::build_frame(&t, pitch, extent);
        let img = v.reslice(&frame, spagent::volume::Grid::Intensity);
        std::slice::from_raw_parts_mut(pixels, extent * extent).copy_from_slice(img.data());
        Ok(())
    })
}

/// Loads the online network of an `SPAGT1` checkpoint. `downsample` and
/// `pose_input` must match the training configuration; the frame extent
/// is inferred from the network input size.
///
/// # Safety
/// `path` is a NUL-terminated string; `agent` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn sp_agent_load(path: *const c_char, downsample: usize, pose_input: bool, agent: *mut *mut SpAgent) -> SpStatus {
    guard(|| {
        let ck = lib(load_checkpoint(path_arg(path)?, 1e-3))?;
        if downsample == 0 {
            return Err((SpStatus::Config, "downsample must be positive".into()));
        }
        let frames = ck.online.input_len() - if pose_input { 3 } else { 0 };
        let side = ((frames / 3) as f64).sqrt().round() as usize;
        if frames % 3 != 0 || side * side * 3 != frames {
            return Err((SpStatus::Shape, "network input is not three square frames".into()));
        }
        let env = EnvConfig {
            frame_extent: side * downsample,
            ..EnvConfig::default()
        };
        boxed(
            agent,
            SpAgent {
                net: ck.online,
                encoder: Encoder { downsample, pose_input },
                env,
            },
        )
    })
}

/// Releases an agent handle; null is ignored.
///
/// # Safety
/// `agent` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_agent_free(agent: *mut SpAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Q-values of a raw network input of `len` doubles.
///
/// # Safety
/// `input` points to `len` doubles, `q` to 6.
#[no_mangle]
pub unsafe extern "C" fn sp_agent_q_values(agent: *const SpAgent, input: *const f64, len: usize, q: *mut f64) -> SpStatus {
    guard(|| {
        let a = handle(agent)?;
        if input.is_null() || q.is_null() {
            return Err(null());
        }
        let o = lib(a.net.forward(std::slice::from_raw_parts(input, len)))?;
        std::slice::from_raw_parts_mut(q, NUM_ACTIONS).copy_from_slice(&o.q);
        Ok(())
    })
}

/// Runs one greedy episode from `start` and reports the final tangent
/// point, the step count and the plane metrics against the ground truth.
///
/// # Safety
/// `start` and `end` point to 3 doubles; the other outputs to one value.
#[no_mangle]
pub unsafe extern "C" fn sp_agent_search(
    agent: *const SpAgent,
    volume: *const SpVolume,
    start: *const f64,
    end: *mut f64,
    steps: *mut usize,
    ang_deg: *mut f64,
    dis_mm: *mut f64,
) -> SpStatus {
    guard(|| {
        let a = handle(agent)?;
        let v = &handle(volume)?.inner;
        let s = lib(TangentPoint::from_vec(read3(start)?))?;
        let env = lib(Environment::new(v, a.env.clone()))?;
        let policy = Policy::Agent {
            net: a.net.clone(),
            encoder: a.encoder,
        };
        let (fin, n) = lib(spagent::cli::eval::run_episode(&env, &policy, s, 0))?;
        let m = plane_metrics(&tangent_to_plane(&fin), &tangent_to_plane(&env.target()));
        write3(end, fin.as_vec())?;
        out(steps, n)?;
        out(ang_deg, m.ang_deg)?;
        out(dis_mm, m.dis_mm)
    })
}
