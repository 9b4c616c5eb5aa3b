fn main() {
    std::process::exit(multiblank_cli::main_with_args(std::env::args_os()));
}
