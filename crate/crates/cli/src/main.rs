fn main() {
    std::process::exit(specsim_cli::main_with_args(std::env::args_os()));
}
