mod args;
mod commands;
mod run;
mod svg;

use clap::Parser;

fn main() {
    let cli = match args::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help and --version land here too, with exit code 0
            let _ = e.print();
            std::process::exit(e.exit_code());
        }
    };
    let threads = cli.threads.filter(|&t| t > 0).unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
        eprintln!("warning: thread pool: {e}");
    }
    if let Err(e) = commands::dispatch(cli.command, threads) {
        let kind = match &e {
            run::CliError::Io(_) => "I/O error",
            run::CliError::Usage(_) => "usage error",
            run::CliError::Scene(_) => "scene error",
            run::CliError::Physics(_) => "physics error",
        };
        eprintln!("atomchip: {kind}: {e}");
        std::process::exit(e.exit_code());
    }
}
