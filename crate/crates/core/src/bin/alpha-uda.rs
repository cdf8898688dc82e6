fn main() {
    std::process::exit(alpha_uda::cli::run_from(std::env::args_os()));
}
