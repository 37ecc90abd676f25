fn main() {
    std::process::exit(twincal::cli::run(std::env::args_os()));
}
