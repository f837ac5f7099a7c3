fn main() {
    std::process::exit(qnbm::cli::run(std::env::args_os()));
}
