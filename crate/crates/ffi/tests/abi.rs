use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use arterylabel::geometry::{write_centerlines, CenterlinePolyline, GridGeometry, VoxelMask};
use arterylabel::model::{ArchConfig, Model};
use arterylabel_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(al_last_error_message()) }.to_string_lossy().into_owned()
}

/// Two labeled rods on a small grid plus their centerlines.
fn fixture(dir: &Path) -> (CString, CString, CString) {
    let g = GridGeometry::new([24, 12, 6], [0.5; 3], [0.0; 3]).unwrap();
    let mut mask = VoxelMask::empty(g);
    for i in 2..22 {
        for j in 2..5 {
            for k in 2..5 {
                mask.set([i, j, k], 1);
                mask.set([i, j + 5, k], 2);
            }
        }
    }
    let mask_path = dir.join("rods.vmask");
    mask.write(&mask_path).unwrap();
    let lines = vec![
        CenterlinePolyline::new("a", vec![[1.0, 1.5, 1.5], [10.5, 1.5, 1.5]], Some(1)).unwrap(),
        CenterlinePolyline::new("b", vec![[1.0, 4.0, 1.5], [10.5, 4.0, 1.5]], Some(2)).unwrap(),
    ];
    let line_path = dir.join("rods.centerlines.json");
    write_centerlines(&line_path, &lines).unwrap();
    let config = ArchConfig {
        channels: vec![8, 16],
        rates: vec![1, 2],
        blocks_per_stage: 1,
        neighbors_h: 4,
        num_classes_k: 3,
        stem_channels: 8,
    };
    let model_path = dir.join("tiny.ckpt");
    Model::<f32>::new(config, 1).unwrap().save(&model_path).unwrap();
    (cstr(&mask_path), cstr(&line_path), cstr(&model_path))
}

#[test]
fn full_labeling_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (mask_path, line_path, model_path) = fixture(dir.path());
    unsafe {
        let mut mask = ptr::null_mut();
        assert_eq!(al_mask_load(mask_path.as_ptr(), &mut mask), AlStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(al_mask_dims(mask, dims.as_mut_ptr()), AlStatus::Ok);
        assert_eq!(dims, [24, 12, 6]);

        let mut model = ptr::null_mut();
        assert_eq!(al_model_load(model_path.as_ptr(), &mut model), AlStatus::Ok);
        let mut k = 0;
        assert_eq!(al_model_num_classes(model, &mut k), AlStatus::Ok);
        assert_eq!(k, 3);

        let mut labeled = ptr::null_mut();
        assert_eq!(al_label_mask(model, mask, 64, 7, &mut labeled), AlStatus::Ok, "{}", last_error());
        let (mut data, mut len) = (ptr::null(), 0);
        assert_eq!(al_mask_labels(labeled, &mut data, &mut len), AlStatus::Ok);
        let (mut src, mut src_len) = (ptr::null(), 0);
        al_mask_labels(mask, &mut src, &mut src_len);
        assert_eq!(len, src_len);
        let out = std::slice::from_raw_parts(data, len);
        let input = std::slice::from_raw_parts(src, src_len);
        for (&o, &i) in out.iter().zip(input) {
            assert_eq!(o == 0, i == 0, "foreground must be preserved");
            assert!(o <= 3);
        }

        let mut lines = ptr::null_mut();
        assert_eq!(al_centerlines_load(line_path.as_ptr(), &mut lines), AlStatus::Ok);
        let mut n = 0;
        assert_eq!(al_centerlines_count(lines, &mut n), AlStatus::Ok);
        assert_eq!(n, 2);
        // Against the ground truth every branch gets its own class.
        let mut classes = [0u8; 2];
        let mut rates = [0f64; 2];
        assert_eq!(
            al_label_centerlines(lines, mask, 1.0, 3, classes.as_mut_ptr(), rates.as_mut_ptr()),
            AlStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(classes, [1, 2]);
        assert!(rates.iter().all(|&r| r > 0.5 && r <= 1.0));
        assert_eq!(
            al_label_centerlines(lines, labeled, 1.0, 3, classes.as_mut_ptr(), ptr::null_mut()),
            AlStatus::Ok
        );

        let saved = cstr(&dir.path().join("out.vmask"));
        assert_eq!(al_mask_save(labeled, saved.as_ptr()), AlStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(al_mask_load(saved.as_ptr(), &mut reloaded), AlStatus::Ok);
        let (mut d2, mut l2) = (ptr::null(), 0);
        al_mask_labels(reloaded, &mut d2, &mut l2);
        assert_eq!(std::slice::from_raw_parts(d2, l2), out);

        al_mask_free(reloaded);
        al_mask_free(labeled);
        al_mask_free(mask);
        al_centerlines_free(lines);
        al_model_free(model);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("missing.vmask"));
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOTACHECKPOINT-AT-ALL").unwrap();
    let bad = cstr(&bad);
    unsafe {
        let mut mask = ptr::null_mut();
        assert_eq!(al_mask_load(missing.as_ptr(), &mut mask), AlStatus::Io);
        assert!(mask.is_null());
        assert!(last_error().contains("missing.vmask"));

        let mut model = ptr::null_mut();
        assert_eq!(al_model_load(bad.as_ptr(), &mut model), AlStatus::Checkpoint);
        assert!(model.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(al_mask_load(ptr::null(), &mut mask), AlStatus::NullArgument);
        assert_eq!(al_mask_load(missing.as_ptr(), ptr::null_mut()), AlStatus::NullArgument);
        assert_eq!(al_mask_dims(ptr::null(), ptr::null_mut()), AlStatus::NullArgument);

        let (_, _, model_path) = fixture(dir.path());
        assert_eq!(al_model_load(model_path.as_ptr(), &mut model), AlStatus::Ok);
        let (mask_path, _, _) = fixture(dir.path());
        al_mask_load(mask_path.as_ptr(), &mut mask);
        let mut out = ptr::null_mut();
        assert_eq!(al_label_mask(model, mask, 0, 0, &mut out), AlStatus::InvalidArgument);
        // Fewer points than the downsampling rates allow.
        assert_eq!(al_label_mask(model, mask, 1, 0, &mut out), AlStatus::Data);
        assert!(out.is_null());
        al_mask_free(mask);
        al_model_free(model);
        // Freeing null is a no-op.
        al_mask_free(ptr::null_mut());
        al_model_free(ptr::null_mut());
        al_centerlines_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_per_thread() {
    let missing = CString::new("/nonexistent/x.vmask").unwrap();
    let mut mask = ptr::null_mut();
    unsafe { al_mask_load(missing.as_ptr(), &mut mask) };
    assert!(!last_error().is_empty());
    std::thread::spawn(|| assert_eq!(last_error(), "")).join().unwrap();
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(al_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/arterylabel.h");
    let src = format!(
        "#include \"{}\"\nint main(void) {{ AlMask *m = 0; AlStatus s = al_mask_load(\"x\", &m); al_mask_free(m); return s == AL_STATUS_OK; }}\n",
        header.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("use.c");
    std::fs::write(&c, src).unwrap();
    let Ok(status) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&c).status() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(status.success());
}
