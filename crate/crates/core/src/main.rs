fn main() {
    std::process::exit(ppfa_core::cli::main_with_args(std::env::args_os()));
}
