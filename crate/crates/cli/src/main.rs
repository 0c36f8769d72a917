fn main() {
    std::process::exit(planlens_cli::run(std::env::args_os()));
}
