use std::path::Path;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");

    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("CARGO_MANIFEST_DIR");
    let config = cbindgen::Config::from_file(Path::new(&crate_dir).join("cbindgen.toml"))
        .expect("cbindgen.toml parses");
    let bindings = cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("header generation");

    let mut fresh = Vec::new();
    bindings.write(&mut fresh);

    // Rewrite only on change so the committed header never churns mtimes.
    let header = Path::new(&crate_dir).join("include").join("fedsim.h");
    if std::fs::read(&header).ok().as_deref() != Some(fresh.as_slice()) {
        std::fs::create_dir_all(header.parent().unwrap()).expect("create include dir");
        std::fs::write(&header, &fresh).expect("write header");
    }
}
