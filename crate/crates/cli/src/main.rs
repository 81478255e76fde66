fn main() {
    std::process::exit(mfcontrol_cli::run(std::env::args_os()));
}
