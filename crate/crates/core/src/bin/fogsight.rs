fn main() {
    std::process::exit(fogsight::cli::run(std::env::args_os()));
}
