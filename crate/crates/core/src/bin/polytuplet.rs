fn main() {
    std::process::exit(polytuplet::cli::run(std::env::args_os()));
}
