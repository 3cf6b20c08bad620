fn main() -> std::process::ExitCode {
    bevfuse::cli::main()
}
