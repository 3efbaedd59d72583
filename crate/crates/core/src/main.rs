fn main() {
    std::process::exit(c2df::cli::run(std::env::args_os()));
}
