fn main() {
    std::process::exit(vertexkit::cli::run(std::env::args_os()));
}
