use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use causal_crowds::dataset::read_split;
use causal_crowds_ffi::*;

fn last_error() -> String {
    let p = cc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn line(px: f64, py: f64, angle: f64) -> CcOrcaLine {
    CcOrcaLine {
        point: CcVec2 { x: px, y: py },
        direction: CcVec2 {
            x: angle.cos(),
            y: angle.sin(),
        },
    }
}

#[test]
fn lp2_matches_a_hand_solved_projection() {
    // Half-plane x <= 0.5 (left of the upward line through (0.5, 0)).
    let lines = [line(0.5, 0.0, std::f64::consts::FRAC_PI_2)];
    let mut out = CcVec2::default();
    let s = unsafe { cc_solve_lp2(lines.as_ptr(), 1, CcVec2 { x: 1.0, y: 0.3 }, 2.0, &mut out) };
    assert_eq!(s, CcStatus::Ok);
    assert!((out.x - 0.5).abs() < 1e-12 && (out.y - 0.3).abs() < 1e-12, "{out:?}");

    let s = unsafe { cc_solve_lp2(ptr::null(), 0, CcVec2 { x: 3.0, y: 4.0 }, 1.0, &mut out) };
    assert_eq!(s, CcStatus::Ok);
    assert!((out.x - 0.6).abs() < 1e-12 && (out.y - 0.8).abs() < 1e-12);
}

#[test]
fn lp2_reports_infeasibility_and_lp3_minimises_violation() {
    // x <= -0.5 and x >= 0.5: best compromise is x = 0 with violation 0.5.
    let lines = [
        line(-0.5, 0.0, std::f64::consts::FRAC_PI_2),
        line(0.5, 0.0, -std::f64::consts::FRAC_PI_2),
    ];
    let mut out = CcVec2::default();
    let s = unsafe { cc_solve_lp2(lines.as_ptr(), 2, CcVec2 { x: 0.0, y: 0.0 }, 1.0, &mut out) };
    assert_eq!(s, CcStatus::Infeasible);
    assert!(last_error().contains("infeasible"));
    let s = unsafe { cc_solve_lp3(lines.as_ptr(), 2, 1.0, &mut out) };
    assert_eq!(s, CcStatus::Ok);
    assert!(out.x.abs() < 1e-9, "{out:?}");
}

#[test]
fn invalid_arguments_are_reported() {
    let mut out = CcVec2::default();
    let bad = [CcOrcaLine {
        point: CcVec2::default(),
        direction: CcVec2 { x: 2.0, y: 0.0 },
    }];
    assert_eq!(unsafe { cc_solve_lp3(bad.as_ptr(), 1, 1.0, &mut out) }, CcStatus::InvalidArgument);
    assert_eq!(unsafe { cc_solve_lp3(ptr::null(), 0, -1.0, &mut out) }, CcStatus::InvalidArgument);
    assert_eq!(unsafe { cc_solve_lp3(ptr::null(), 3, 1.0, &mut out) }, CcStatus::NullPointer);
    assert_eq!(unsafe { cc_solve_lp3(ptr::null(), 0, 1.0, ptr::null_mut()) }, CcStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn ade_and_fde_of_a_shifted_path() {
    let a: Vec<CcVec2> = (0..12).map(|t| CcVec2 { x: t as f64, y: 0.0 }).collect();
    let b: Vec<CcVec2> = a.iter().map(|p| CcVec2 { x: p.x, y: 0.25 }).collect();
    let (mut ade, mut fde) = (0.0, 0.0);
    assert_eq!(unsafe { cc_ade(a.as_ptr(), b.as_ptr(), 12, &mut ade) }, CcStatus::Ok);
    assert_eq!(unsafe { cc_fde(a.as_ptr(), b.as_ptr(), 12, &mut fde) }, CcStatus::Ok);
    assert_eq!((ade, fde), (0.25, 0.25));
    assert_eq!(unsafe { cc_ade(a.as_ptr(), b.as_ptr(), 0, &mut ade) }, CcStatus::InvalidArgument);
}

#[test]
fn split_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let name = CString::new("id").unwrap();
    let mut split: *mut CcSplit = ptr::null_mut();
    assert_eq!(unsafe { cc_split_generate(name.as_ptr(), 3, 7, &mut split) }, CcStatus::Ok);
    assert!(!split.is_null());
    unsafe {
        assert_eq!(cc_split_len(split), 3);
        assert_eq!(cc_split_write(split, cstr(dir.path()).as_ptr()), CcStatus::Ok);

        let (records, manifest) = read_split(dir.path()).unwrap();
        assert_eq!(CStr::from_ptr(cc_split_digest(split)).to_str().unwrap(), manifest.digest);

        let mut back: *mut CcSplit = ptr::null_mut();
        assert_eq!(cc_split_read(cstr(dir.path()).as_ptr(), &mut back), CcStatus::Ok);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(CStr::from_ptr(cc_split_scene_id(back, i)).to_str().unwrap(), r.scene_id);
            let (mut agents, mut steps) = (0, 0);
            assert_eq!(cc_split_scene_shape(back, i, &mut agents, &mut steps), CcStatus::Ok);
            assert_eq!((agents, steps), (r.num_agents(), 20));
            let mut buf = vec![CcVec2::default(); steps];
            for (agent, t) in r.trajectories.iter().enumerate() {
                assert_eq!(cc_split_trajectory(back, i, agent, buf.as_mut_ptr(), steps), CcStatus::Ok);
                assert!(buf.iter().zip(t).all(|(a, b)| a.x == b.x && a.y == b.y));
            }
            assert_eq!(cc_split_num_annotations(back, i), r.annotations.len());
            for (k, a) in r.annotations.iter().enumerate() {
                let mut out = std::mem::MaybeUninit::<CcAnnotation>::uninit();
                assert_eq!(cc_split_annotation(back, i, k, out.as_mut_ptr()), CcStatus::Ok);
                let out = out.assume_init();
                assert_eq!((out.agent_id, out.effect), (a.agent_id, a.effect));
                assert_eq!(
                    out.category as usize,
                    causal_crowds::counterfactual::Category::ALL
                        .iter()
                        .position(|c| *c == a.category)
                        .unwrap()
                );
            }
        }
        let mut buf = [CcVec2::default(); 4];
        assert_eq!(cc_split_trajectory(back, 0, 0, buf.as_mut_ptr(), 4), CcStatus::BufferTooSmall);
        assert_eq!(cc_split_trajectory(back, 9, 0, buf.as_mut_ptr(), 4), CcStatus::OutOfRange);
        assert!(cc_split_scene_id(back, 3).is_null());
        cc_split_free(back);
        cc_split_free(split);
        cc_split_free(ptr::null_mut());
        assert_eq!(cc_split_len(ptr::null()), 0);
    }
}

#[test]
fn split_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut split: *mut CcSplit = ptr::null_mut();
    unsafe {
        assert_eq!(cc_split_read(cstr(&dir.path().join("none")).as_ptr(), &mut split), CcStatus::Io);
        assert!(split.is_null());

        let name = CString::new("id").unwrap();
        assert_eq!(cc_split_generate(name.as_ptr(), 2, 1, &mut split), CcStatus::Ok);
        assert_eq!(cc_split_write(split, cstr(dir.path()).as_ptr()), CcStatus::Ok);
        cc_split_free(split);
        let path = dir.path().join(causal_crowds::dataset::SCENES_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        let i = bytes.iter().position(|b| (b'1'..=b'8').contains(b)).unwrap();
        bytes[i] += 1;
        std::fs::write(&path, bytes).unwrap();
        let mut back: *mut CcSplit = ptr::null_mut();
        assert_eq!(cc_split_read(cstr(dir.path()).as_ptr(), &mut back), CcStatus::DigestMismatch);
        assert!(last_error().contains("digest"));

        let bogus = CString::new("mall").unwrap();
        assert_eq!(cc_split_generate(bogus.as_ptr(), 2, 1, &mut back), CcStatus::InvalidArgument);
        assert_eq!(cc_split_generate(name.as_ptr(), 0, 1, &mut back), CcStatus::InvalidArgument);
    }
}

#[test]
fn header_is_valid_c_and_declares_every_export() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/causal_crowds.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "cc_last_error_message",
        "cc_version",
        "cc_solve_lp2",
        "cc_solve_lp3",
        "cc_ade",
        "cc_fde",
        "cc_split_generate",
        "cc_split_read",
        "cc_split_write",
        "cc_split_free",
        "cc_split_len",
        "cc_split_digest",
        "cc_split_scene_id",
        "cc_split_scene_shape",
        "cc_split_trajectory",
        "cc_split_num_annotations",
        "cc_split_annotation",
    ] {
        assert!(text.contains(&format!(" {f}(")) || text.contains(&format!("*{f}(")), "{f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"causal_crowds.h\"\nint main(void) { CcVec2 v; return cc_solve_lp3(0, 0, 1.0, &v) == CC_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(cc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
