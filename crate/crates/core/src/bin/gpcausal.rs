fn main() {
    std::process::exit(gpcausal::cli::run(std::env::args_os()));
}
