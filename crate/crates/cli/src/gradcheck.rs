use clap::Args;
use tgraphx::detfusion::synth::{generate, to_graphs, SynthConfig};
use tgraphx::gradcheck::{check, jitter};
use tgraphx::model::PrecisionName;
use tgraphx::tensor::{GradCheckConfig, Mode};
use tgraphx::{Graph, GraphBatch, Model};

use crate::fail::Failure;
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Synthetic detection graphs in the checked batch.
    #[arg(long, default_value_t = 4)]
    graphs: usize,
    /// Side of each node's crop.
    #[arg(long, default_value_t = 8)]
    crop: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Check at most this many elements per parameter (0 = all).
    #[arg(long, default_value_t = 16)]
    max_elems: usize,
    /// Amplitude of the uniform noise added to the initial weights.
    #[arg(long, default_value_t = 0.1)]
    jitter: f64,
}

/// Checks the configured model in double precision on small detection
/// graphs, in eval and train mode.
pub fn run(args: &GradcheckArgs, cfg_args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = cfg_args.load()?;
    if args.graphs == 0 || args.crop == 0 {
        return Err(Failure::Usage("--graphs and --crop must be positive".into()));
    }
    let mut mcfg = cfg.model.clone();
    mcfg.precision = PrecisionName::Double;
    // A zero-initialized last aggregator would hide every upstream layer.
    mcfg.gnn.zero_init_last = false;
    let synth = SynthConfig {
        samples: args.graphs,
        image_size: 32,
        seed: cfg.synth.seed,
        ..cfg.synth.clone()
    };
    let graphs: Vec<Graph<f64>> = to_graphs(&generate(&synth)?, args.crop)?
        .into_iter()
        .map(|s| s.graph)
        .collect();
    crate::data::check_compatible(&mcfg, &graphs, "gradcheck")?;
    let batch = GraphBatch::merge(&graphs)?;
    let (model, mut params) = Model::new::<f64>(mcfg)?;
    jitter(&mut params, cfg.model.seed ^ 0x9e37_79b9, args.jitter);

    let mut failed = Vec::new();
    for mode in [Mode::Eval, Mode::Train] {
        let gc = GradCheckConfig {
            eps: args.eps,
            tolerance: args.tolerance,
            mode,
            seed: cfg.train.seed,
            max_elems: (args.max_elems > 0).then_some(args.max_elems),
        };
        let report = check(&params, gc, |ctx| Ok(model.loss(ctx, &batch)?.0))?;
        for p in &report.params {
            let ok = p.rel_error < report.tolerance;
            println!(
                "{:<6} {:<44} {:>5} elems  rel err {:.3e}  {}",
                format!("{mode:?}").to_lowercase(),
                p.name,
                p.checked,
                p.rel_error,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                failed.push(format!("{} ({mode:?})", p.name));
            }
        }
        println!("{mode:?}: max rel err {:.3e}", report.max_rel_error());
    }
    if failed.is_empty() {
        println!("gradient check passed");
        Ok(())
    } else {
        let more = failed.len().saturating_sub(3);
        let mut list = failed[..failed.len().min(3)].join(", ");
        if more > 0 {
            list.push_str(&format!(" and {more} more"));
        }
        Err(Failure::Numeric(format!("gradient check failed for {list}")))
    }
}
