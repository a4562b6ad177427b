//! Regenerates the bundled toy dataset. The files under `data/toy/` in the
//! repository root were produced by this program; a test guards against
//! drift between them and the generator.

use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/toy"));
    attncap::toy::write_toy_dataset(&dir).expect("write toy dataset");
    println!("toy dataset written to {}", dir.display());
}
