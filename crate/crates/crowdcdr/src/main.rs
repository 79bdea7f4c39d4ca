fn main() {
    std::process::exit(crowdcdr::cli::run(std::env::args_os()));
}
