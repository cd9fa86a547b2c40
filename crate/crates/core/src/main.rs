fn main() {
    std::process::exit(rateregion::cli::run(std::env::args_os()));
}
