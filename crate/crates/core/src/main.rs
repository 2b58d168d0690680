fn main() {
    std::process::exit(tdubench::cli::run(std::env::args_os()));
}
