fn main() {
    std::process::exit(repsim::cli::run(std::env::args_os()));
}
