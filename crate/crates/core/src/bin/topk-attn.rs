fn main() {
    std::process::exit(topk_attention::cli::main_exit_code());
}
