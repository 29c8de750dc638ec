//! Compiles a small C program against the generated header and links it to
//! the static library built alongside these tests.

use std::path::PathBuf;
use std::process::Command;

use pod_core::detector::{save_checkpoint, Architecture, DetectorModel, TrainConfig};

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "pod.h"

int main(int argc, char **argv) {
    if (argc != 2) return 10;
    PodModel *model = NULL;
    if (pod_model_load("/definitely/missing.podmodel", &model) != POD_STATUS_IO) return 11;
    if (strstr(pod_last_error(), "missing.podmodel") == NULL) return 12;
    if (pod_model_load(argv[1], &model) != POD_STATUS_OK) return 13;
    size_t side = 0;
    if (pod_model_input_size(model, &side) != POD_STATUS_OK || side != 64) return 14;
    double pixels[32 * 32];
    for (int i = 0; i < 32 * 32; i++) pixels[i] = 0.25;
    PodDetection dets[512];
    size_t n = 0;
    if (pod_model_predict(model, pixels, 32, 32, 0.0, 0.5, dets, 512, &n) != POD_STATUS_OK) return 15;
    if (n == 0) return 16;
    PodBox a = {0, 0.5, 0.5, 0.2, 0.2};
    double v = 0.0;
    if (pod_iou(&a, &a, &v) != POD_STATUS_OK || v != 1.0) return 17;
    pod_model_free(model);
    printf("ok %s %zu\n", pod_version(), n);
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header_and_static_library() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    assert!(header_dir.join("pod.h").is_file(), "header not generated");
    let lib = target_dir().join("libpod_ffi.a");
    assert!(lib.is_file(), "static library missing at {}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = tmp.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap_or_else(|e| panic!("could not run C compiler `{cc}`: {e}"));
    assert!(status.success(), "C compilation failed");

    let model = DetectorModel::init(Architecture::compact(), &mut pod_core::stream!(4)).unwrap();
    let ckpt = tmp.path().join("m.podmodel");
    save_checkpoint(&ckpt, &model, &TrainConfig::default(), 0.5, 0).unwrap();
    let out = Command::new(&bin).arg(&ckpt).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "exit {:?}: {stdout}",
        out.status.code()
    );
    assert!(
        stdout.starts_with(&format!("ok {}", env!("CARGO_PKG_VERSION"))),
        "{stdout}"
    );
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/pod.h"))
            .unwrap();
    for f in [
        "pod_last_error",
        "pod_version",
        "pod_model_load",
        "pod_model_free",
        "pod_model_input_size",
        "pod_model_predict",
        "pod_iou",
        "pod_average_precision",
        "pod_augment",
        "typedef struct PodModel PodModel",
        "POD_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(header.contains(f), "header lacks {f}");
    }
}
