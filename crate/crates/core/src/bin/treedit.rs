fn main() {
    std::process::exit(treedit::cli::run(std::env::args_os()));
}
