use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use iot_hub_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    iot_hub_string_free(p);
    s
}

unsafe fn last_error() -> String {
    CStr::from_ptr(iot_hub_last_error()).to_str().unwrap().to_owned()
}

fn quiet(ticks: u64) -> *mut IotHub {
    let mut hub = ptr::null_mut();
    assert_eq!(unsafe { iot_hub_boot_quiet(7, ticks, &mut hub) }, IotHubStatus::Ok);
    assert!(!hub.is_null());
    hub
}

#[test]
fn boot_run_report_free() {
    let hub = quiet(30);
    unsafe {
        assert_eq!(iot_hub_run_until(hub, 30), IotHubStatus::Ok);
        let mut ticks = 0;
        assert_eq!(iot_hub_ticks(hub, &mut ticks), IotHubStatus::Ok);
        assert_eq!(ticks, 30);
        let mut out = ptr::null_mut();
        assert_eq!(iot_hub_report_json(hub, &mut out), IotHubStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["ticksRun"], 30);
        iot_hub_free(hub);
    }
}

#[test]
fn errors_map_to_codes() {
    let hub = quiet(0);
    unsafe {
        let mut out = ptr::null_mut();
        let user = c("urn:hub:user:u0");
        let status = iot_hub_submit(hub, user.as_ptr(), c("no.such.capability").as_ptr(), ptr::null(), false, &mut out);
        assert_eq!(status, IotHubStatus::UnknownCapability);
        assert!(last_error().contains("no.such.capability"));
        assert!(out.is_null());

        let stranger = c("urn:hub:user:u99");
        let status = iot_hub_submit(hub, stranger.as_ptr(), c("analytics.location").as_ptr(), ptr::null(), false, &mut out);
        assert_eq!(status, IotHubStatus::UnknownUser);

        assert_eq!(iot_hub_run_until(ptr::null(), 1), IotHubStatus::NullArgument);
        assert_eq!(iot_hub_report_json(hub, ptr::null_mut()), IotHubStatus::NullArgument);

        let bad = c("{\"select\": [\"?s\"]}");
        assert_eq!(iot_hub_query(hub, bad.as_ptr(), ptr::null(), &mut out), IotHubStatus::InvalidQuery);

        let broken = c("{\"seed\": ");
        let mut other = ptr::null_mut();
        assert_eq!(iot_hub_boot(broken.as_ptr(), &mut other), IotHubStatus::InvalidConfig);
        assert!(other.is_null());

        let invalid = [0xffu8, 0];
        assert_eq!(iot_hub_boot(invalid.as_ptr().cast(), &mut other), IotHubStatus::InvalidUtf8);
        iot_hub_free(hub);
        iot_hub_free(ptr::null_mut());
        iot_hub_string_free(ptr::null_mut());
    }
}

#[test]
fn submit_query_and_http() {
    let hub = quiet(60);
    unsafe {
        assert_eq!(iot_hub_run_until(hub, 60), IotHubStatus::Ok);
        let mut out = ptr::null_mut();
        let params = c("{\"window\": \"15m\"}");
        let status = iot_hub_submit(
            hub,
            c("urn:hub:user:u1").as_ptr(),
            c("analytics.activity").as_ptr(),
            params.as_ptr(),
            false,
            &mut out,
        );
        assert_eq!(status, IotHubStatus::Ok, "{}", last_error());
        let outcome: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(outcome["status"], "completed");

        let q = c(r#"{"select": ["?vo"], "where": [["?vo", "urn:hub:unit", "\"lux\""]]}"#);
        assert_eq!(iot_hub_query(hub, q.as_ptr(), c("smart-home").as_ptr(), &mut out), IotHubStatus::Ok, "{}", last_error());
        let result: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(result["results"]["rows"].as_array().unwrap().len(), 2);

        let mut code = 0u16;
        assert_eq!(iot_hub_http(hub, c("GET").as_ptr(), c("/nowhere").as_ptr(), ptr::null(), &mut code, &mut out), IotHubStatus::Ok);
        assert_eq!(code, 404);
        take(out);
        iot_hub_free(hub);
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(iot_hub_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/iot_hub.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for f in [
        "iot_hub_last_error",
        "iot_hub_boot",
        "iot_hub_boot_quiet",
        "iot_hub_free",
        "iot_hub_string_free",
        "iot_hub_run_until",
        "iot_hub_ticks",
        "iot_hub_report_json",
        "iot_hub_submit",
        "iot_hub_query",
        "iot_hub_http",
        "iot_hub_version",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(text.contains("typedef struct IotHub IotHub;"));
    assert!(text.contains("IOT_HUB_STATUS_PANIC = 12"));
}

/// Compiles the C smoke program against the header and the shared library
/// cargo built next to this test binary.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libiot_hub_ffi.so");
    assert!(lib.exists(), "{} not built", lib.display());
    let out_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let bin = out_dir.join("iot_hub_smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(profile_dir)
        .arg("-liot_hub_ffi")
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .expect("a C compiler is installed");
    assert!(status.success(), "C build failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}: {}", run.status.code(), String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
