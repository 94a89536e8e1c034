use clap::Parser;
use pprec_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Err(e) = pprec_cli::run(&cli) {
        log::error!("{e}");
        eprintln!("error: {e}");
        std::process::exit(pprec_cli::exit_code(e.kind()));
    }
}
