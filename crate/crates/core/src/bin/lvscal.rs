use clap::Parser;
use lvs_calib::cli::{run, Cli};

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("lvscal: {}", e.msg);
        std::process::exit(e.code);
    }
}
