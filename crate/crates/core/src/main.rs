fn main() -> std::process::ExitCode {
    centerpoly::cli::main()
}
