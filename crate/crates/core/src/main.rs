fn main() {
    std::process::exit(ris_chest::cli::run_cli(std::env::args_os()));
}
