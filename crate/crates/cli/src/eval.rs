use std::path::PathBuf;

use clap::Args;
use tgraphx::tensor::Real;
use tgraphx::train::report::default_class_names;
use tgraphx::train::{load_checkpoint, predict_dataset, read_checkpoint, EvalReport};

use crate::data::{check_compatible, dataset, load_split};
use crate::fail::{io, Failure};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    /// Split directory (detections + images, or graphs.jsonl) or a graph
    /// JSONL file.
    #[arg(long, value_name = "PATH")]
    data: PathBuf,
    /// Writes report.jsonl and report.txt here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Use the best-validation weights stored in the checkpoint.
    #[arg(long)]
    best: bool,
    /// Split name recorded in the report (default: the data path's name).
    #[arg(long)]
    split: Option<String>,
}

pub fn run(args: &EvalArgs, cfg_args: &ConfigArgs) -> Result<(), Failure> {
    let (meta, _) = read_checkpoint(&args.checkpoint)?;
    match meta.precision.as_str() {
        "f32" => eval::<f32>(args, cfg_args),
        "f64" => eval::<f64>(args, cfg_args),
        p => Err(Failure::Data(format!("{}: unknown precision {p}", args.checkpoint.display()))),
    }
}

fn eval<T: Real>(args: &EvalArgs, cfg_args: &ConfigArgs) -> Result<(), Failure> {
    let cfg = cfg_args.load()?;
    let (model, tcfg, state) = load_checkpoint::<T>(&args.checkpoint)?;
    let params = if args.best {
        state
            .best_params
            .as_ref()
            .ok_or_else(|| Failure::Data("checkpoint holds no best-validation weights".into()))?
    } else {
        &state.params
    };
    let graphs = load_split::<T>(&args.data, cfg.data.node_size)?;
    check_compatible(&model.cfg, &graphs, "eval")?;
    let data = dataset(graphs)?;
    let (bundle, loss) = predict_dataset(&model, params, &data, tcfg.eval_batch_size)?;
    if !loss.is_finite() {
        return Err(Failure::Numeric(format!("evaluation loss is {loss}")));
    }
    let split = args.split.clone().unwrap_or_else(|| {
        args.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".into())
    });
    let report = EvalReport::new(
        &split,
        &bundle,
        loss,
        data.graphs(),
        model.cfg.target,
        default_class_names(model.cfg.classes),
    )?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(io(out))?;
        let p = out.join("report.jsonl");
        std::fs::write(&p, report.to_jsonl()).map_err(io(&p))?;
        let p = out.join("report.txt");
        std::fs::write(&p, table).map_err(io(&p))?;
    }
    Ok(())
}
