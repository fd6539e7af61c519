use clap::Parser;
use hyqa_cli::{exit, run, Cli};

fn main() {
    let cli = Cli::parse();
    let command = cli.command;
    let result = cli.resolve().and_then(|cfg| run(command, &cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            std::process::exit(exit::OK);
        }
        Err(e) => {
            let record = e.record(command.name());
            eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
            std::process::exit(e.exit_code());
        }
    }
}
