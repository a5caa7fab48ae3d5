use clap::Parser;

fn main() {
    let cli = tsa_cli::Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore the error if a pool already exists (tests set one up)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    if let Err(err) = tsa_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
