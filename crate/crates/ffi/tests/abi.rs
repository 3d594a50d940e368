use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use apalm_ffi::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = apalm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut ApalmConfig {
    let mut cfg = ptr::null_mut();
    let path = cstr(&configs().join(name));
    assert_eq!(unsafe { apalm_config_load(path.as_ptr(), &mut cfg) }, ApalmStatus::Ok);
    cfg
}

#[test]
fn load_run_and_query() {
    unsafe {
        let cfg = load("nmf_desk.toml");
        assert_eq!(apalm_config_set_max_iters(cfg, 300), ApalmStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(apalm_run(cfg, &mut run), ApalmStatus::Ok);
        assert_eq!(apalm_run_iterations(run), 300);
        assert_eq!(apalm_run_exit_code(run), 2);
        assert!(apalm_run_objective(run).is_finite());
        assert!(apalm_run_residual(run) > 0.0);

        let n = apalm_run_point_len(run);
        assert!(n > 0);
        let mut small = vec![0.0; n - 1];
        assert_eq!(apalm_run_point(run, small.as_mut_ptr(), small.len()), ApalmStatus::BufferTooSmall);
        assert!(last_error().contains("need"));
        let mut buf = vec![f64::NAN; n];
        assert_eq!(apalm_run_point(run, buf.as_mut_ptr(), n), ApalmStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite() && *v >= 0.0));

        let mut csv = ptr::null_mut();
        assert_eq!(apalm_run_trace_csv(run, &mut csv), ApalmStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        apalm_string_free(csv);
        assert!(text.starts_with("k,j,gamma,d_max,step_norm,psi,phi,res_a,res_b,res_c,res_w\n"));
        assert_eq!(text.lines().count(), 302);

        apalm_run_free(run);
        apalm_config_free(cfg);
    }
}

#[test]
fn matches_the_library() {
    let path = configs().join("nmf_desk_parallel.toml");
    let mut lib_cfg = apalm::ExperimentConfig::load(&path).unwrap();
    lib_cfg.override_workers("1").unwrap();
    lib_cfg.solver.max_iters = 200;
    let expected = apalm::experiment::execute(&lib_cfg).unwrap().trace.to_csv();
    unsafe {
        let cfg = load("nmf_desk_parallel.toml");
        assert_eq!(apalm_config_set_workers(cfg, 1), ApalmStatus::Ok);
        assert_eq!(apalm_config_set_max_iters(cfg, 200), ApalmStatus::Ok);
        let mut run = ptr::null_mut();
        assert_eq!(apalm_run(cfg, &mut run), ApalmStatus::Ok);
        let mut csv = ptr::null_mut();
        assert_eq!(apalm_run_trace_csv(run, &mut csv), ApalmStatus::Ok);
        assert_eq!(CStr::from_ptr(csv).to_str().unwrap(), expected);
        apalm_string_free(csv);
        apalm_run_free(run);
        apalm_config_free(cfg);
    }
}

#[test]
fn writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let toml = std::fs::read_to_string(configs().join("quad_cluster_desk.toml")).unwrap();
    let toml = toml.replace("../out/", "out/");
    let path = dir.path().join("q.toml");
    std::fs::write(&path, toml).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(apalm_config_load(cstr(&path).as_ptr(), &mut cfg), ApalmStatus::Ok);
        apalm_config_set_max_iters(cfg, 50);
        let mut run = ptr::null_mut();
        assert_eq!(apalm_run(cfg, &mut run), ApalmStatus::Ok);
        assert_eq!(apalm_run_write(run), ApalmStatus::Ok);
        apalm_run_free(run);
        apalm_config_free(cfg);
    }
    assert!(dir.path().join("out/quad_cluster_desk.csv").exists());
    assert!(dir.path().join("out/quad_cluster_desk.summary").exists());
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let missing = cstr(Path::new("/nonexistent/x.toml"));
        assert_eq!(apalm_config_load(missing.as_ptr(), &mut cfg), ApalmStatus::Io);
        assert!(cfg.is_null());
        assert!(last_error().contains("x.toml"));

        assert_eq!(apalm_config_load(ptr::null(), &mut cfg), ApalmStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(apalm_config_load(bad.as_ptr().cast(), &mut cfg), ApalmStatus::InvalidUtf8);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[problem]\nkind = \"nmf_desk\"\n[solver]\nc = 2.0\n").unwrap();
        assert_eq!(apalm_config_load(cstr(&path).as_ptr(), &mut cfg), ApalmStatus::Config);

        let cfg = load("nmf_desk.toml");
        assert_eq!(apalm_config_set_workers(cfg, 2), ApalmStatus::Config);
        assert_eq!(apalm_config_set_max_iters(cfg, 0), ApalmStatus::Config);
        // a successful call clears the message
        assert_eq!(apalm_config_set_max_iters(cfg, 10), ApalmStatus::Ok);
        assert!(apalm_last_error().is_null());
        apalm_config_free(cfg);

        let cfg = load("nmf_desk_parallel.toml");
        assert_eq!(apalm_config_set_workers(cfg, 0), ApalmStatus::Config);
        assert_eq!(apalm_config_set_workers(cfg, 3), ApalmStatus::Ok);
        apalm_config_free(cfg);

        let mut run = ptr::null_mut();
        assert_eq!(apalm_run(ptr::null(), &mut run), ApalmStatus::NullPointer);
        assert!(apalm_run_objective(ptr::null()).is_nan());
        assert_eq!(apalm_run_exit_code(ptr::null()), -1);
        apalm_run_free(ptr::null_mut());
        apalm_config_free(ptr::null_mut());
    }
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/apalm.h")).unwrap();
    for name in ["apalm_config_load", "apalm_run", "apalm_run_point", "apalm_last_error", "APALM_STATUS_WORKER_PANIC = 19", "typedef struct ApalmRun ApalmRun;"] {
        assert!(header.contains(name), "{name}");
    }
}

/// Compiles a small C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else { return };
    let exe_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = exe_dir.join("libapalm_ffi.a");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "apalm.h"
int main(int argc, char **argv) {
    ApalmConfig *cfg = NULL;
    ApalmRun *run = NULL;
    if (apalm_config_load(argv[1], &cfg) != APALM_STATUS_OK) return 20;
    apalm_config_set_max_iters(cfg, 100);
    if (apalm_run(cfg, &run) != APALM_STATUS_OK) return 21;
    printf("%llu %d\n", (unsigned long long)apalm_run_iterations(run), apalm_run_exit_code(run));
    apalm_run_free(run);
    apalm_config_free(cfg);
    return apalm_config_load("/nonexistent.toml", &cfg) == APALM_STATUS_IO ? 0 : 22;
}
"#,
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let mut cmd = Command::new(&cc);
    cmd.arg("-Wall").arg("-Werror").arg("-I").arg(&include);
    if !lib.exists() {
        let st = cmd.arg("-fsyntax-only").arg(&src).status().unwrap();
        assert!(st.success());
        return;
    }
    let bin = dir.path().join("main");
    let st = cmd.arg(&src).arg(&lib).args(["-lpthread", "-ldl", "-lm", "-o"]).arg(&bin).status().unwrap();
    assert!(st.success());
    let out = Command::new(&bin).arg(configs().join("nmf_desk.toml")).output().unwrap();
    assert!(out.status.success(), "{:?}", out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "100 2");
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .map(|c| c.to_string())
        .ok_or(())
}
