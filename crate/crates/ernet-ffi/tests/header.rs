//! The generated C header must stand alone as valid C.

use std::process::Command;

#[test]
fn generated_header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ernet.h");
    assert!(
        std::path::Path::new(header).exists(),
        "header not generated at {header}"
    );
    let probe = format!("#include \"{header}\"\nint main(void) {{ return 0; }}\n");
    let dir = tempfile::tempdir().unwrap();
    let c_path = dir.path().join("probe.c");
    std::fs::write(&c_path, probe).unwrap();
    let output = Command::new("cc")
        .arg("-std=c99")
        .arg("-fsyntax-only")
        .arg(&c_path)
        .output()
        .expect("cc available");
    assert!(
        output.status.success(),
        "header failed to compile:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}
