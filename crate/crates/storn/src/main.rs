fn main() {
    std::process::exit(storn::cli::run(std::env::args_os()));
}
