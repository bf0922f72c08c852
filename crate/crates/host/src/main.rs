use clap::Parser;
use emr_host::cli::{run, Cli};
use emr_host::Exit;

fn main() {
    let cli = Cli::parse();
    let exit = match run(cli) {
        Ok(exit) => exit,
        Err(failure) => {
            eprintln!("emr: {}", failure.message);
            failure.exit
        }
    };
    if exit != Exit::Ok {
        std::process::exit(exit as i32);
    }
}
