fn main() {
    std::process::exit(irt_bench::cli::main_with_args(std::env::args_os()));
}
