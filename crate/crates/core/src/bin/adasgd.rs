use std::io;

fn main() {
    let code = adasgd::harness::run_cli(std::env::args_os(), &mut io::stdout(), &mut io::stderr());
    std::process::exit(code);
}
