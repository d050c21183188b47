fn main() {
    std::process::exit(misteri::cli::run(std::env::args_os()));
}
