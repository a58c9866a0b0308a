fn main() {
    std::process::exit(iterative_retriever::cli::main_with_args(std::env::args_os()));
}
