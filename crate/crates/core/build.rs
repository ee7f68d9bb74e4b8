fn main() {
    // Dense SVD goes through the system LAPACK/BLAS (see src/linalg.rs).
    println!("cargo:rustc-link-lib=dylib=lapack");
    println!("cargo:rustc-link-lib=dylib=blas");
}
