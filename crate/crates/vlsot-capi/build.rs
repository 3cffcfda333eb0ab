use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(crate_dir.join("include/vlsot.h"));
        }
        Err(e) => {
            // Header generation failures should not mask compile errors in
            // the crate itself; surface them as warnings.
            println!("cargo:warning=cbindgen failed: {e}");
        }
    }
}
