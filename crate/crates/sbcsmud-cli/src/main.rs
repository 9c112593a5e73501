fn main() {
    std::process::exit(sbcsmud_cli::run_cli(std::env::args_os()));
}
