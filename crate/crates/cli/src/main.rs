fn main() -> std::process::ExitCode {
    igc_cli::main()
}
