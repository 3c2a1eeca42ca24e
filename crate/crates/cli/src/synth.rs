use std::path::PathBuf;

use clap::Args;
use tgraphx::detfusion::synth::{generate, write_dataset, SPLIT_NAMES};

use crate::fail::{io, Failure};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory; receives train/, val/ and test/ splits.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Also write each split's graphs.jsonl (nodes cropped to data.node_size).
    #[arg(long)]
    graphs: bool,
}

pub fn run(args: &SynthArgs, cfg_args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = cfg_args.load()?;
    let samples = generate(&cfg.synth)?;
    let counts = write_dataset(&args.out, &cfg.synth, &samples, args.graphs.then_some(cfg.data.node_size))?;
    let path = args.out.join("config.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(io(&path))?;
    for (name, n) in SPLIT_NAMES.iter().zip(counts) {
        println!("{name}: {n} images");
    }
    Ok(())
}
