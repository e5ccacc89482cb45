//! Print per-category agent means for a generated split.
//!
//! `cargo run --release --example split_stats -- id 200 7 [radius]`

use causal_crowds::scenario::{generate_split, Context, Split, SplitSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let split = Split::parse(args.get(1).map(String::as_str).unwrap_or("id")).expect("unknown split");
    let n = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(7);
    let mut spec = SplitSpec::new(split, n, seed);
    if let Some(r) = args.get(4).and_then(|s| s.parse::<f64>().ok()) {
        spec.context = match spec.context {
            Context::OpenArea { .. } => Context::OpenArea { radius: r },
            Context::Plaza { static_fraction, .. } => Context::Plaza {
                radius: r,
                static_fraction,
            },
            street => street,
        };
    }
    let start = std::time::Instant::now();
    let (_, summary) = generate_split(&spec).expect("generation failed");
    println!("{summary} ({:.1}s)", start.elapsed().as_secs_f64());
}
