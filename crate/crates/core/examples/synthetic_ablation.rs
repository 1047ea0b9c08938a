//! Leave-one-domain-out ablation on the synthetic preset.
//!
//! `cargo run --release -p caudg-core --example synthetic_ablation -- [epochs] [seeds] [variants...]`

use caudg_core::data::{synth_generate, SynthConfig};
use caudg_core::pipeline::{ablate, TrainConfig, Variant};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = TrainConfig::for_preset("synthetic")?;
    if let Some(e) = args.first() {
        cfg.epochs = e.parse()?;
    }
    let seeds: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let variants: Vec<Variant> = if args.len() > 2 {
        args[2..].iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    } else {
        vec![Variant::Full, Variant::WoInd, Variant::WoCon, Variant::WoIds, Variant::WoCdpl, Variant::Erm]
    };
    let ds = synth_generate(&SynthConfig::default())?;
    let seeds: Vec<u64> = (0..seeds).collect();
    let started = std::time::Instant::now();
    let table = ablate(&cfg, &ds, &variants, &seeds, None, &mut |_, r, _| {
        eprintln!("{:<14} target {} seed {} acc {:.3}", r.variant.to_string(), r.target, r.seed, r.test.accuracy);
        Ok(())
    })?;
    print!("{}", table.render());
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
