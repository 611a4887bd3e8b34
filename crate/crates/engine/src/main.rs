fn main() {
    std::process::exit(semplan_engine::cli::main(std::env::args_os()));
}
