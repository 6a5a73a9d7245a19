fn main() {
    std::process::exit(resofluo::cli::main_with_args(std::env::args_os()));
}
