fn main() {
    std::process::exit(bro::cli::main_with(std::env::args_os()));
}
