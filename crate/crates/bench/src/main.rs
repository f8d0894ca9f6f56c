fn main() {
    std::process::exit(sbattn_bench::cli::main_with(std::env::args_os()));
}
