fn main() {
    std::process::exit(procforge::cli::run(std::env::args_os()));
}
