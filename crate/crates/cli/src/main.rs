use clap::Parser;

fn main() {
    let cli = o2c_cli::Cli::parse();
    match o2c_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
