fn main() {
    let result = fdgrasp::cli::run(std::env::args_os());
    std::process::exit(result.exit_code);
}
