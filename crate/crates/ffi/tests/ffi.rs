use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use pdtrans::training::{Checkpoint, TrainConfig};
use pdtrans::{ModelConfig, PdTrans};
use pdtrans_ffi::*;

fn last_error() -> String {
    let p = pdt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            embed_dim_id: 4,
            embed_dim_pos: 4,
            t0: 24,
            tau: 12,
            latent_dim: 4,
            kernel_size: 5,
            n_series: 3,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn write_checkpoint(dir: &Path) -> PathBuf {
    let config = tiny_config();
    let model = PdTrans::<f32>::new(config.model.clone(), 3).unwrap();
    let path = dir.join("tiny.ckpt");
    Checkpoint::new(&config, &model, None).save(&path).unwrap();
    path
}

fn synthetic() -> *mut PdtDataset {
    let spec = CString::new(r#"{"n_series": 3, "length": 120, "seed": 4}"#).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { pdt_dataset_synthetic(spec.as_ptr(), &mut ds) }, PdtStatus::Ok);
    assert!(pdt_last_error().is_null());
    ds
}

#[test]
fn loss_helpers_match_worked_examples() {
    let (y, y_hat) = ([2.0, 2.0], [1.0, 3.0]);
    let mut out = 0.0;
    assert_eq!(
        unsafe { pdt_quantile_loss(y.as_ptr(), y_hat.as_ptr(), 2, 0.5, &mut out) },
        PdtStatus::Ok
    );
    assert!((out - 0.5).abs() < 1e-12);
    let (y, mu, sigma) = ([2.0], [0.0], [2.0]);
    assert_eq!(
        unsafe { pdt_gaussian_nll(y.as_ptr(), mu.as_ptr(), sigma.as_ptr(), 1, &mut out) },
        PdtStatus::Ok
    );
    assert!((out - 2.112085713764618).abs() < 1e-6);
    assert_eq!(pdt_lr_schedule(4, 0.001), 0.00064);
}

#[test]
fn errors_carry_codes_and_messages() {
    let zeros = [0.0, 0.0];
    let mut out = 0.0;
    let status = unsafe { pdt_quantile_loss(zeros.as_ptr(), zeros.as_ptr(), 2, 0.5, &mut out) };
    assert_eq!(status, PdtStatus::Numeric);
    assert!(last_error().contains("ZeroDenominator"));

    let status = unsafe { pdt_quantile_loss(ptr::null(), zeros.as_ptr(), 2, 0.5, &mut out) };
    assert_eq!(status, PdtStatus::NullPointer);

    let sigma = [-1.0];
    let status = unsafe { pdt_gaussian_nll(zeros.as_ptr(), zeros.as_ptr(), sigma.as_ptr(), 1, &mut out) };
    assert_eq!(status, PdtStatus::Numeric);

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { pdt_model_load(missing.as_ptr(), &mut model) }, PdtStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));

    let bad = CString::new(r#"{"n_series": 1, "length": 10, "period": 24}"#).unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { pdt_dataset_synthetic(bad.as_ptr(), &mut ds) },
        PdtStatus::InvalidArgument
    );
}

#[test]
fn dataset_round_trip_through_csv() {
    let ds = synthetic();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("d.csv").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(pdt_dataset_write_csv(ds, path.as_ptr()), PdtStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(pdt_dataset_load_csv(path.as_ptr(), &mut loaded), PdtStatus::Ok);
        let mut n = 0;
        assert_eq!(pdt_dataset_n_series(loaded, &mut n), PdtStatus::Ok);
        assert_eq!(n, 3);
        let (mut len, mut id) = (0, -1);
        assert_eq!(pdt_dataset_series_info(loaded, 2, &mut len, &mut id), PdtStatus::Ok);
        assert_eq!((len, id), (120, 2));
        assert_eq!(pdt_dataset_series_info(loaded, 3, &mut len, &mut id), PdtStatus::Data);
        pdt_dataset_free(loaded);
        pdt_dataset_free(ds);
        pdt_dataset_free(ptr::null_mut());
    }
}

#[test]
fn model_forecast_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = CString::new(write_checkpoint(dir.path()).to_str().unwrap()).unwrap();
    let ds = synthetic();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(pdt_model_load(ckpt.as_ptr(), &mut model), PdtStatus::Ok);
        let (mut t0, mut tau) = (0, 0);
        assert_eq!(pdt_model_dims(model, &mut t0, &mut tau), PdtStatus::Ok);
        assert_eq!((t0, tau), (24, 12));

        let mut q = [[0.0f64; 12]; 3];
        let (mut mu_hat, mut trend, mut seasonal, mut sigma) = ([0.0; 12], [0.0; 12], [0.0; 12], [0.0; 12]);
        let [q10, q50, q90] = &mut q;
        let status = pdt_model_forecast_window(
            model,
            ds,
            1,
            10,
            32,
            7,
            q10.as_mut_ptr(),
            q50.as_mut_ptr(),
            q90.as_mut_ptr(),
            mu_hat.as_mut_ptr(),
            sigma.as_mut_ptr(),
            trend.as_mut_ptr(),
            seasonal.as_mut_ptr(),
        );
        assert_eq!(status, PdtStatus::Ok, "{}", last_error());
        for i in 0..12 {
            assert!(q[0][i] <= q[1][i] && q[1][i] <= q[2][i]);
            assert!(sigma[i] > 0.0);
            assert!((mu_hat[i] - trend[i] - seasonal[i]).abs() < 1e-4);
        }
        let mut again = [0.0; 12];
        let null = ptr::null_mut();
        pdt_model_forecast_window(
            model,
            ds,
            1,
            10,
            32,
            7,
            null,
            again.as_mut_ptr(),
            null,
            null,
            null,
            null,
            null,
        );
        assert_eq!(again, q[1]);

        let status = pdt_model_forecast_window(model, ds, 1, 100, 8, 0, null, null, null, null, null, null, null);
        assert_eq!(status, PdtStatus::Data);

        let (mut r50, mut r90) = (0.0, 0.0);
        assert_eq!(
            pdt_model_evaluate(model, ds, 8, 2, 0, &mut r50, &mut r90),
            PdtStatus::Ok
        );
        assert!(r50 > 0.0 && r90 > 0.0);
        pdt_model_free(model);
        pdt_dataset_free(ds);
    }
}

#[test]
fn train_writes_run_directory() {
    let ds = synthetic();
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config();
    config.max_epochs = 1;
    config.batches_per_epoch = 2;
    config.batch_size = 4;
    config.val_windows = 1;
    config.test_windows = 1;
    config.n_samples_val = 2;
    let json = CString::new(serde_json::to_string(&config).unwrap()).unwrap();
    let run = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    let mut best = f64::NAN;
    unsafe {
        assert_eq!(
            pdt_train(json.as_ptr(), ds, run.as_ptr(), &mut best),
            PdtStatus::Ok,
            "{}",
            last_error()
        );
        pdt_dataset_free(ds);
    }
    assert!(best.is_finite());
    for f in ["best.ckpt", "last.ckpt", "train_log.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pdtrans.h")).unwrap();
    for name in [
        "typedef struct PdtModel PdtModel",
        "typedef struct PdtDataset PdtDataset",
        "PDT_STATUS_OK = 0",
        "pdt_last_error(void)",
        "pdt_model_load(",
        "pdt_model_forecast_window(",
        "pdt_quantile_loss(",
        "pdt_lr_schedule(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

/// Builds a small C program against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let target_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = target_dir.join("libpdtrans_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library at {} or no C compiler", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "pdtrans.h"
int main(void) {
    double y[2] = {2.0, 2.0}, yhat[2] = {1.0, 3.0}, q = 0.0;
    if (pdt_quantile_loss(y, yhat, 2, 0.5, &q) != PDT_STATUS_OK || q != 0.5) return 1;
    PdtModel *m = NULL;
    if (pdt_model_load("/nonexistent.ckpt", &m) != PDT_STATUS_IO || m != NULL) return 2;
    if (strstr(pdt_last_error(), "/nonexistent.ckpt") == NULL) return 3;
    PdtDataset *d = NULL;
    if (pdt_dataset_synthetic(NULL, &d) != PDT_STATUS_OK) return 4;
    size_t n = 0;
    pdt_dataset_n_series(d, &n);
    pdt_dataset_free(d);
    printf("%s %zu %.5f\n", pdt_version(), n, pdt_lr_schedule(2, 0.001));
    return n == 20 ? 0 : 5;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.1.0 20 0.00080");
}
