fn main() {
    std::process::exit(mcpnet::cli::run(std::env::args_os()));
}
