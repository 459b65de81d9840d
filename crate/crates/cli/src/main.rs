fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(fluxlab_cli::main_with_args(std::env::args_os()))
}
