fn main() -> std::process::ExitCode {
    cso_kld::cli::main()
}
