//! Doc-test companion for the radqc guide.
//!
//! Each module below inlines one chapter of the mdbook under `book/src`, so
//! `cargo test` compiles and runs every code snippet the guide shows. If a
//! chapter drifts from the library's actual API, the build breaks here.
