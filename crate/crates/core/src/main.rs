fn main() {
    std::process::exit(neural_sysid::cli::run(std::env::args_os()));
}
