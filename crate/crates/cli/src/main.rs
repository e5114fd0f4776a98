fn main() {
    std::process::exit(deepwarp_cli::run(std::env::args_os().collect()));
}
