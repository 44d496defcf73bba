fn main() -> std::process::ExitCode {
    ptrparse::cli::main()
}
