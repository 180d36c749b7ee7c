mod commands;
mod config;
mod data;
mod error;
mod output;

use clap::Parser;

use crate::config::{Args, RunConfig, OUT_ENV};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let env_out = std::env::var_os(OUT_ENV).map(Into::into);
    let result = RunConfig::resolve(args, env_out).and_then(|c| commands::run(&c));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
