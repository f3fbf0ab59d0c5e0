use std::io;

fn main() {
    let code = stnmf_cli::run_cli(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
