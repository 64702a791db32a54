use clap::Parser;

fn main() {
    let cli = srd_chance::cli::Cli::parse();
    match srd_chance::cli::run(&cli) {
        Ok(log) => {
            for line in log {
                eprintln!("{line}");
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(1);
        }
    }
}
