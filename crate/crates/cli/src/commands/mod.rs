pub mod chain;
pub mod eval;
pub mod generate;
pub mod prepare;
pub mod train;

use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use anyhow::{Context, Result};

use crate::config::{pick, FileConfig};
use crate::manifest::RunManifest;
use crate::{Cli, Command};

/// Settings shared by every subcommand after merging flags and file.
pub struct Ctx {
    pub seed: u64,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub file: FileConfig,
}

impl Ctx {
    pub fn manifest(&self, subcommand: &'static str) -> RunManifest {
        RunManifest::new(subcommand, self.seed, self.threads, self.deterministic)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.global.config.as_deref())?;
    let deterministic = cli.global.deterministic || file.deterministic.unwrap_or(false);
    let threads = if deterministic {
        Some(1)
    } else {
        cli.global.threads.or(file.threads)
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    let ctx = Ctx {
        seed: pick(cli.global.seed, &file.seed, 1),
        threads,
        deterministic,
        file,
    };
    match cli.command {
        Command::Prepare(a) => prepare::run(&ctx, a),
        Command::Train(a) => train::run(&ctx, a),
        Command::Generate(a) => generate::run(&ctx, a),
        Command::Chain(a) => chain::run(&ctx, a),
        Command::Eval(a) => eval::run(&ctx, a),
    }
}

/// Lines of `path`, or of stdin when `path` is `None` or `-`.
pub fn read_lines(path: Option<&Path>) -> Result<Vec<String>> {
    let reader: Box<dyn BufRead> = match path {
        Some(p) if p != Path::new("-") => Box::new(BufReader::new(
            fs::File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        _ => Box::new(BufReader::new(io::stdin())),
    };
    Ok(reader.lines().collect::<io::Result<_>>()?)
}
