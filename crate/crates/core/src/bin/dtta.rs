fn main() {
    std::process::exit(dynamic_tta::harness::cli::run(std::env::args_os()));
}
