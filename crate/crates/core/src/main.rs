use clap::Parser;

fn main() {
    let cli = area_angle::cli::Cli::parse();
    match area_angle::cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
