fn main() {
    std::process::exit(dicorl_cli::run_cli(std::env::args_os()));
}
