fn main() {
    std::process::exit(mmctune::run(std::env::args_os()));
}
