//! Command-line surface and annotation HTTP backend for pausebench.

pub mod args;
pub mod commands;
pub mod error;
pub mod serve;

use std::sync::Arc;

pub use error::{CliError, Result};

use args::{Cli, Command, ServeArgs};

fn run_serve(a: &ServeArgs) -> Result<String> {
    let manifest = pausebench::DatasetManifest::load(&a.manifest)?;
    let labels_dir = a.labels_dir.clone().unwrap_or_else(|| manifest.root.join("annotations"));
    let state = Arc::new(serve::AppState::new(manifest, labels_dir));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io("<tokio runtime>", e))?;
    rt.block_on(serve::serve(state, a.bind))
        .map_err(|e| CliError::io(a.bind.to_string(), e))?;
    Ok("server stopped".into())
}

/// Runs one subcommand and returns its summary line.
pub fn run(cli: &Cli) -> Result<String> {
    use commands as c;
    match &cli.command {
        Command::Synth(a) => c::synth(a),
        Command::Features(a) => c::features(a),
        Command::Segment(a) => c::segment(a),
        Command::Split(a) => c::split(a),
        Command::Train(a) => c::train(a),
        Command::Predict(a) => c::predict(a),
        Command::Postproc(a) => c::postproc(a),
        Command::Eval(a) => c::eval(a),
        Command::Run(a) => c::run(a),
        Command::Exertion(a) => c::exertion(a),
        Command::Stats(a) => c::stats(a),
        Command::Merge(a) => c::merge(a),
        Command::Serve(a) => run_serve(a),
    }
}
