fn main() {
    let code = crosslayer_cli::parse_and_dispatch(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
