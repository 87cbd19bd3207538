use std::ffi::{CStr, CString};
use std::ptr;

use funcdict::loss::{TrainConfig, Trainer};
use funcdict_ffi::*;

fn last_error() -> String {
    let p = fd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generate(preset: &str, count: usize, n: usize, seed: u64) -> *mut FdDataset {
    let preset = CString::new(preset).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { fd_dataset_generate(preset.as_ptr(), count, n, seed, &mut ds) }, FdStatus::Ok);
    ds
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(fd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dataset_round_trips_through_jsonl() {
    let ds = generate("boxes3", 4, 96, 7);
    assert_eq!(unsafe { fd_dataset_len(ds) }, 4);
    let mut n = 0;
    assert_eq!(unsafe { fd_dataset_num_points(ds, 2, &mut n) }, FdStatus::Ok);
    assert_eq!(n, 96);

    let tmp = tempfile::tempdir().unwrap();
    let path = CString::new(tmp.path().join("d.jsonl").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fd_dataset_save(ds, path.as_ptr()) }, FdStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { fd_dataset_load(path.as_ptr(), &mut back) }, FdStatus::Ok);

    let (mut xyz_a, mut xyz_b) = (vec![0.0; 3 * n], vec![0.0; 3 * n]);
    let (mut lab_a, mut lab_b) = (vec![0; n], vec![0; n]);
    unsafe {
        assert_eq!(fd_dataset_points(ds, 2, xyz_a.as_mut_ptr(), xyz_a.len()), FdStatus::Ok);
        assert_eq!(fd_dataset_points(back, 2, xyz_b.as_mut_ptr(), xyz_b.len()), FdStatus::Ok);
        assert_eq!(fd_dataset_labels(ds, 2, lab_a.as_mut_ptr(), n), FdStatus::Ok);
        assert_eq!(fd_dataset_labels(back, 2, lab_b.as_mut_ptr(), n), FdStatus::Ok);
        fd_dataset_free(ds);
        fd_dataset_free(back);
    }
    assert_eq!(xyz_a, xyz_b);
    assert_eq!(lab_a, lab_b);
    assert_eq!(lab_a.iter().max(), Some(&2));
}

#[test]
fn errors_set_status_and_message() {
    let bad = CString::new("lamp").unwrap();
    let mut ds = ptr::null_mut();
    let status = unsafe { fd_dataset_generate(bad.as_ptr(), 4, 96, 0, &mut ds) };
    assert_eq!(status, FdStatus::InvalidConfig);
    assert!(ds.is_null());
    assert!(last_error().contains("lamp"), "{}", last_error());

    assert_eq!(unsafe { fd_dataset_generate(ptr::null(), 4, 96, 0, &mut ds) }, FdStatus::NullArgument);
    assert!(last_error().contains("preset"));

    let missing = CString::new("/nonexistent/d.jsonl").unwrap();
    assert_eq!(unsafe { fd_dataset_load(missing.as_ptr(), &mut ds) }, FdStatus::Io);

    let ds = generate("boxes2", 2, 64, 0);
    let mut short = vec![0.0; 10];
    unsafe {
        assert_eq!(fd_dataset_points(ds, 0, short.as_mut_ptr(), short.len()), FdStatus::InvalidArgument);
        assert!(last_error().contains("expected 192"), "{}", last_error());
        assert_eq!(fd_dataset_points(ds, 5, short.as_mut_ptr(), short.len()), FdStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        fd_dataset_free(ds);
        fd_dataset_free(ptr::null_mut());
        assert_eq!(fd_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn model_init_matches_the_trainer_and_forward_is_row_stochastic() {
    let ds = generate("table4", 3, 128, 1);
    let mode = CString::new("seg").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fd_model_init(mode.as_ptr(), 6, 11, &mut model) }, FdStatus::Ok);
    assert_eq!(unsafe { fd_model_k(model) }, 6);

    let shapes = funcdict::geometry::generate_family(
        funcdict::geometry::Preset::Table4,
        3,
        128,
        &Default::default(),
        &funcdict::numerics::RngStream::new(1),
    )
    .unwrap();
    let cfg = TrainConfig {
        k: 6,
        seed: 11,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(cfg, &shapes).unwrap();
    let (expected, _) = funcdict::model::forward(
        trainer.params(),
        &shapes[0].cloud,
        funcdict::model::ConstraintMode::Segmentation,
    )
    .unwrap();

    let mut xyz = vec![0.0; 3 * 128];
    let mut a = vec![0.0; 128 * 6];
    unsafe {
        assert_eq!(fd_dataset_points(ds, 0, xyz.as_mut_ptr(), xyz.len()), FdStatus::Ok);
        assert_eq!(fd_model_forward(model, xyz.as_ptr(), 128, a.as_mut_ptr(), a.len()), FdStatus::Ok);
        assert_eq!(fd_model_forward(model, xyz.as_ptr(), 128, a.as_mut_ptr(), 5), FdStatus::InvalidArgument);
        fd_model_free(model);
        fd_dataset_free(ds);
    }
    assert_eq!(a, expected.matrix.as_slice());
    for row in a.chunks(6) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn model_load_reads_a_checkpoint() {
    let shapes = funcdict::geometry::generate_family(
        funcdict::geometry::Preset::Boxes(2),
        2,
        64,
        &Default::default(),
        &funcdict::numerics::RngStream::new(0),
    )
    .unwrap();
    let cfg = TrainConfig {
        k: 3,
        mode: funcdict::model::ConstraintMode::Keypoint,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(cfg, &shapes).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("checkpoint.json");
    trainer.checkpoint().save(&file).unwrap();

    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { fd_model_load(path.as_ptr(), &mut model) }, FdStatus::Ok);
    let xyz: Vec<f64> = shapes[1].cloud.points.iter().flatten().copied().collect();
    let mut a = vec![0.0; 64 * 3];
    assert_eq!(unsafe { fd_model_forward(model, xyz.as_ptr(), 64, a.as_mut_ptr(), a.len()) }, FdStatus::Ok);
    unsafe { fd_model_free(model) };
    for j in 0..3 {
        let col: f64 = (0..64).map(|i| a[i * 3 + j]).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
}

#[test]
fn box_ls_clamps_to_the_unit_box() {
    // Columns are orthonormal, so the solution is the clamped projection.
    let a = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let f = [2.0, -0.5, 3.0];
    let (mut x, mut r) = ([0.0; 2], 0.0);
    assert_eq!(unsafe { fd_solve_box_ls(a.as_ptr(), 3, 2, f.as_ptr(), x.as_mut_ptr(), &mut r) }, FdStatus::Ok);
    assert!((x[0] - 1.0).abs() < 1e-9 && x[1].abs() < 1e-9, "{x:?}");
    assert!((r - (1.0 + 0.25 + 9.0)).abs() < 1e-9);

    let nan = [f64::NAN; 6];
    let status = unsafe { fd_solve_box_ls(nan.as_ptr(), 3, 2, f.as_ptr(), x.as_mut_ptr(), ptr::null_mut()) };
    assert_ne!(status, FdStatus::Ok);
}

#[test]
fn hungarian_and_miou() {
    let profit = [1.0, 5.0, 2.0, 4.0, 1.0, 3.0];
    let mut mapping = [0i64; 3];
    let mut total = 0.0;
    let status = unsafe { fd_hungarian_max(profit.as_ptr(), 3, 2, mapping.as_mut_ptr(), &mut total) };
    assert_eq!(status, FdStatus::Ok);
    assert_eq!(mapping, [1, 0, -1]);
    assert_eq!(total, 7.0);

    // Atoms swapped relative to labels: matching recovers a perfect score.
    let a = [0.1, 0.9, 0.2, 0.8, 0.7, 0.3];
    let labels = [0usize, 0, 1];
    let mut miou = 0.0;
    assert_eq!(unsafe { fd_matched_miou(a.as_ptr(), 3, 2, labels.as_ptr(), &mut miou) }, FdStatus::Ok);
    assert_eq!(miou, 1.0);
    assert_eq!(unsafe { fd_matched_miou(a.as_ptr(), 3, 2, labels.as_ptr(), ptr::null_mut()) }, FdStatus::NullArgument);
}
