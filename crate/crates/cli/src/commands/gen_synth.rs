use std::path::PathBuf;

use donn_core::data::{gen_synthetic, MANIFEST_FILE};
use donn_core::DonnError;

use crate::args::GenSynthArgs;
use crate::exit::{CliResult, Failure, CONFIG, IO};

/// Writes the dataset and prints the manifest path.
pub fn run_gen_synth(args: &GenSynthArgs) -> CliResult<PathBuf> {
    let ds = gen_synthetic(
        args.kind,
        args.count,
        args.side,
        args.seed,
        &args.out,
        &args.split,
        args.force,
    )
    .map_err(|e| match e {
        DonnError::Usage(_) | DonnError::Domain(_) => Failure::new(CONFIG, e),
        e => Failure::new(IO, e),
    })?;
    let path = args.out.join(MANIFEST_FILE);
    println!("{}", path.display());
    log::info!("wrote {} samples", ds.manifest.len());
    Ok(path)
}
