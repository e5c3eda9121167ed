fn main() {
    std::process::exit(fastem::cli::run(std::env::args_os()));
}
