fn main() {
    std::process::exit(trifusion_harness::cli::main_with(std::env::args_os().collect()));
}
