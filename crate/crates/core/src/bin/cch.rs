fn main() {
    std::process::exit(cch::cli::run(std::env::args_os()));
}
