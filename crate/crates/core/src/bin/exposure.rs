fn main() {
    std::process::exit(exposure_dynamics::cli::main_with_args(std::env::args_os()));
}
