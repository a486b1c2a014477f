//! Time one streamed pass over the diagonal ensemble of a half-filled ring.
//!
//! `cargo run --release --example de_scan -- 30 12`

use std::time::Instant;

use cgge_core::fock::de_summary;
use cgge_core::lattice::{FermiRule, Quench, QuenchParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(20), |s| s.parse())?;
    let j: f64 = args.next().map_or(Ok(12.0), |s| s.parse())?;
    let q = Quench::from_params(&QuenchParams::half_filled(n, j, 5), FermiRule::Error)?;
    let start = Instant::now();
    let s = de_summary(&q.overlap, &q.post, Some(1.0))?;
    println!(
        "N={n} J={j}: {} configurations in {:.1?}, norm {:.15}, entropy {:.12}",
        s.configs_visited,
        start.elapsed(),
        s.norm,
        s.entropy
    );
    Ok(())
}
