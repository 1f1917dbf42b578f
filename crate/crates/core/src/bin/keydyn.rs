fn main() {
    std::process::exit(keydyn::cli::main(std::env::args_os()));
}
