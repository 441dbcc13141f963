fn main() {
    std::process::exit(attention_market::cli::run_cli(std::env::args_os()));
}
