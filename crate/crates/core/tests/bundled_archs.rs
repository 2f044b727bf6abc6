//! The files under `archs/` are the embedded configuration rows, serialized.
//! Set `DENSIPRUNE_BLESS=1` to regenerate them.

use densiprune::arch::ArchSpec;
use densiprune::tables::{row_arch, CONFIG_ROWS};
use std::path::PathBuf;

fn archs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../archs")
}

#[test]
fn bundled_archs_match_rows() {
    let bless = std::env::var_os("DENSIPRUNE_BLESS").is_some();
    for row in CONFIG_ROWS.iter() {
        let arch = row_arch(row).unwrap();
        let path = archs_dir().join(format!("{}.toml", arch.name));
        if bless {
            arch.save(&path).unwrap();
            continue;
        }
        let loaded = ArchSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(loaded, arch, "{}", path.display());
        assert_eq!(loaded.prunable_sizes(), row.widths);
    }
}
