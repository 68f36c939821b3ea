fn main() {
    std::process::exit(avvp::pipeline::cli::run(std::env::args()));
}
