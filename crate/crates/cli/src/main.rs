use clap::Parser;

fn main() {
    let cli = oscd_cli::Cli::parse();
    if let Err(e) = oscd_cli::run(cli) {
        eprintln!("oscd: {e}");
        std::process::exit(e.exit_code());
    }
}
