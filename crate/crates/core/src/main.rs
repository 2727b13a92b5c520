fn main() {
    std::process::exit(kernelforge::cli::main(std::env::args_os()));
}
