fn main() {
    std::process::exit(veribound_cli::run(std::env::args_os()));
}
