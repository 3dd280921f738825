fn main() -> std::process::ExitCode {
    lrmf::cli::main_entry()
}
