use std::ffi::CString;
use std::ptr;

use spagent_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { sp_last_error(buf.as_mut_ptr(), buf.len()) };
    let s: Vec<u8> = buf.iter().take(n.min(255)).map(|&c| c as u8).collect();
    String::from_utf8(s).unwrap()
}

#[test]
fn tangent_plane_round_trip() {
    let t = [3.0, -4.0, 12.0];
    let (mut n, mut d) = ([0.0; 3], 0.0);
    assert_eq!(unsafe { sp_tangent_to_plane(t.as_ptr(), n.as_mut_ptr(), &mut d) }, SpStatus::Ok);
    assert!((d - 13.0).abs() < 1e-12);
    assert!((n[0] - 3.0 / 13.0).abs() < 1e-12);
    // non-unit normal describing the same plane
    let scaled = [n[0] * 2.0, n[1] * 2.0, n[2] * 2.0];
    let mut back = [0.0; 3];
    assert_eq!(unsafe { sp_plane_to_tangent(scaled.as_ptr(), 2.0 * d, back.as_mut_ptr()) }, SpStatus::Ok);
    for i in 0..3 {
        assert!((back[i] - t[i]).abs() < 1e-9);
    }
}

#[test]
fn degenerate_and_null_inputs() {
    let zero = [0.0; 3];
    let (mut n, mut d) = ([0.0; 3], 0.0);
    assert_eq!(
        unsafe { sp_tangent_to_plane(zero.as_ptr(), n.as_mut_ptr(), &mut d) },
        SpStatus::DegeneratePoint
    );
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { sp_plane_to_tangent(zero.as_ptr(), 1.0, n.as_mut_ptr()) }, SpStatus::DegeneratePoint);
    assert_eq!(
        unsafe { sp_tangent_to_plane(ptr::null(), n.as_mut_ptr(), &mut d) },
        SpStatus::NullPointer
    );
    assert_eq!(last_error(), "null pointer argument");
    let t = [1.0, 1.0, 1.0];
    assert_eq!(unsafe { sp_tangent_to_plane(t.as_ptr(), n.as_mut_ptr(), ptr::null_mut()) }, SpStatus::NullPointer);
    // a success clears the message
    assert_eq!(unsafe { sp_tangent_to_plane(t.as_ptr(), n.as_mut_ptr(), &mut d) }, SpStatus::Ok);
    assert_eq!(unsafe { sp_last_error(ptr::null_mut(), 0) }, 0);
}

#[test]
fn plane_metrics_of_parallel_planes() {
    let a = [0.0, 0.0, 10.0];
    let b = [0.0, 0.0, 12.5];
    let (mut ang, mut dis) = (f64::NAN, f64::NAN);
    assert_eq!(unsafe { sp_plane_metrics(a.as_ptr(), b.as_ptr(), &mut ang, &mut dis) }, SpStatus::Ok);
    assert!(ang.abs() < 1e-9);
    assert!((dis - 2.5).abs() < 1e-12);
}

#[test]
fn image_metrics() {
    let a: Vec<f64> = (0..16 * 16).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let b: Vec<f64> = a.iter().map(|v| 0.5 * v + 0.2).collect();
    let mut r = 0.0;
    assert_eq!(unsafe { sp_ncc(a.as_ptr(), b.as_ptr(), 16, 16, &mut r) }, SpStatus::Ok);
    assert!((r - 1.0).abs() < 1e-9);
    assert_eq!(unsafe { sp_ssim(a.as_ptr(), a.as_ptr(), 16, 16, &mut r) }, SpStatus::Ok);
    assert!((r - 1.0).abs() < 1e-9);
    let flat = vec![0.3; 16 * 16];
    assert_eq!(unsafe { sp_ncc(a.as_ptr(), flat.as_ptr(), 16, 16, &mut r) }, SpStatus::ZeroVariance);
    assert_eq!(unsafe { sp_ncc(ptr::null(), a.as_ptr(), 16, 16, &mut r) }, SpStatus::NullPointer);
}

#[test]
fn volume_handle_life_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let mut v: *mut SpVolume = ptr::null_mut();
    assert_eq!(unsafe { sp_volume_generate(5, 24, &mut v) }, SpStatus::Ok);
    assert!(!v.is_null());
    let (mut dims, mut gt) = ([0usize; 3], [0.0; 3]);
    assert_eq!(unsafe { sp_volume_info(v, dims.as_mut_ptr(), gt.as_mut_ptr()) }, SpStatus::Ok);
    assert_eq!(dims, [24, 24, 24]);

    let path = CString::new(dir.path().join("v.spvol").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sp_volume_save(v, path.as_ptr()) }, SpStatus::Ok);
    let mut w: *mut SpVolume = ptr::null_mut();
    assert_eq!(unsafe { sp_volume_load(path.as_ptr(), &mut w) }, SpStatus::Ok);
    let mut gt2 = [0.0; 3];
    assert_eq!(unsafe { sp_volume_info(w, dims.as_mut_ptr(), gt2.as_mut_ptr()) }, SpStatus::Ok);
    assert_eq!(gt, gt2);

    let (mut p1, mut p2) = (vec![0.0; 9 * 9], vec![0.0; 9 * 9]);
    assert_eq!(unsafe { sp_volume_reslice(v, gt.as_ptr(), 9, 1.0, p1.as_mut_ptr()) }, SpStatus::Ok);
    assert_eq!(unsafe { sp_volume_reslice(w, gt.as_ptr(), 9, 1.0, p2.as_mut_ptr()) }, SpStatus::Ok);
    assert_eq!(p1, p2);
    assert_eq!(unsafe { sp_volume_reslice(v, gt.as_ptr(), 0, 1.0, p1.as_mut_ptr()) }, SpStatus::Config);

    unsafe {
        sp_volume_free(v);
        sp_volume_free(w);
        sp_volume_free(ptr::null_mut());
    }
}

#[test]
fn io_and_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.spvol").to_str().unwrap()).unwrap();
    let mut v: *mut SpVolume = ptr::null_mut();
    assert_eq!(unsafe { sp_volume_load(missing.as_ptr(), &mut v) }, SpStatus::Io);
    assert!(v.is_null());
    let junk = dir.path().join("junk.spvol");
    std::fs::write(&junk, b"NOTAVOLUME").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sp_volume_load(junk.as_ptr(), &mut v) }, SpStatus::Format);
    let mut a: *mut SpAgent = ptr::null_mut();
    assert_eq!(unsafe { sp_agent_load(junk.as_ptr(), 4, true, &mut a) }, SpStatus::Format);
    assert_eq!(unsafe { sp_volume_load(ptr::null(), &mut v) }, SpStatus::NullPointer);
}

#[test]
fn agent_search_from_a_checkpoint() {
    use spagent::agent::{save_checkpoint, Agent, AgentConfig};
    let dir = tempfile::tempdir().unwrap();
    let cfg = AgentConfig {
        hidden: vec![8],
        downsample: 4,
        ..AgentConfig::default()
    };
    let arch = cfg.architecture(32).unwrap();
    let agent = Agent::new(cfg, arch, 1).unwrap();
    let ck = dir.path().join("a.ckpt");
    save_checkpoint(&agent.checkpoint(), &ck).unwrap();
    let ck = CString::new(ck.to_str().unwrap()).unwrap();

    let mut a: *mut SpAgent = ptr::null_mut();
    assert_eq!(unsafe { sp_agent_load(ck.as_ptr(), 4, true, &mut a) }, SpStatus::Ok);
    let mut wrong: *mut SpAgent = ptr::null_mut();
    assert_eq!(unsafe { sp_agent_load(ck.as_ptr(), 4, false, &mut wrong) }, SpStatus::Shape);

    let input = vec![0.1; 3 * 8 * 8 + 3];
    let mut q = [f64::NAN; 6];
    assert_eq!(unsafe { sp_agent_q_values(a, input.as_ptr(), input.len(), q.as_mut_ptr()) }, SpStatus::Ok);
    assert!(q.iter().all(|v| v.is_finite()));
    assert_eq!(unsafe { sp_agent_q_values(a, input.as_ptr(), 5, q.as_mut_ptr()) }, SpStatus::Shape);

    let mut v: *mut SpVolume = ptr::null_mut();
    assert_eq!(unsafe { sp_volume_generate(2, 24, &mut v) }, SpStatus::Ok);
    let start = [1.0, 1.0, 1.0];
    let (mut end, mut steps, mut ang, mut dis) = ([0.0; 3], 0usize, 0.0, 0.0);
    let run = |end: &mut [f64; 3], steps: &mut usize, ang: &mut f64, dis: &mut f64| unsafe {
        sp_agent_search(a, v, start.as_ptr(), end.as_mut_ptr(), steps, ang, dis)
    };
    assert_eq!(run(&mut end, &mut steps, &mut ang, &mut dis), SpStatus::Ok);
    assert!(steps > 0 && steps <= 60);
    assert!((0.0..=180.0).contains(&ang) && dis >= 0.0);
    let (mut end2, mut steps2, mut ang2, mut dis2) = ([0.0; 3], 0usize, 0.0, 0.0);
    assert_eq!(run(&mut end2, &mut steps2, &mut ang2, &mut dis2), SpStatus::Ok);
    assert_eq!((end, steps, ang, dis), (end2, steps2, ang2, dis2));
    unsafe {
        sp_agent_free(a);
        sp_volume_free(v);
    }
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/spagent.h")).unwrap();
    for f in [
        "sp_last_error",
        "sp_tangent_to_plane",
        "sp_plane_to_tangent",
        "sp_plane_metrics",
        "sp_ncc",
        "sp_ssim",
        "sp_volume_generate",
        "sp_volume_load",
        "sp_volume_save",
        "sp_volume_free",
        "sp_volume_info",
        "sp_volume_reslice",
        "sp_agent_load",
        "sp_agent_free",
        "sp_agent_q_values",
        "sp_agent_search",
    ] {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct SpVolume SpVolume;"));
    assert!(h.contains("SP_STATUS_PANIC = 9"));
}
