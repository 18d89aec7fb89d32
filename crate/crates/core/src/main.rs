fn main() -> std::process::ExitCode {
    demapf::cli::main_with_args(std::env::args_os())
}
