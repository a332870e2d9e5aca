use clap::Parser;

use wsfn_lab::commands::{dispatch, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli));
}
