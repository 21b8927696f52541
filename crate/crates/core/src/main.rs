fn main() {
    std::process::exit(homtwin::cli::run(std::env::args_os()));
}
