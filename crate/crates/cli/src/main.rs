fn main() {
    std::process::exit(oscdecay_cli::run_cli(std::env::args_os()));
}
