fn main() {
    std::process::exit(threshnet::cli::run(std::env::args_os()));
}
