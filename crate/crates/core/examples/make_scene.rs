//! Writes synthetic scenes in the HSC1 cube format.
//!
//! ```text
//! cargo run --example make_scene -- low-rank 64 64 31 3 scene.hsc
//! cargo run --example make_scene -- two-halves 200 200 31 3 halves.hsc
//! ```

use std::process::exit;

use hsfusion::io::write_cube;
use hsfusion::synth::{low_rank_scene, two_subspace_scene};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 6 {
        eprintln!("usage: make_scene <low-rank|two-halves> ROWS COLS BANDS RANK OUT");
        exit(2);
    }
    let num = |s: &str| -> usize {
        s.parse().unwrap_or_else(|_| {
            eprintln!("not a count: {s}");
            exit(2)
        })
    };
    let (rows, cols, bands, rank) = (num(&args[1]), num(&args[2]), num(&args[3]), num(&args[4]));
    let scene = match args[0].as_str() {
        "low-rank" => low_rank_scene(rows, cols, bands, rank, 1),
        "two-halves" => two_subspace_scene(rows, cols, bands, rank, cols / 2, 1),
        other => {
            eprintln!("unknown scene kind: {other}");
            exit(2);
        }
    };
    if let Err(e) = scene.and_then(|x| write_cube(&x, &args[5])) {
        eprintln!("error: {e}");
        exit(1);
    }
}
