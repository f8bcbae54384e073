fn main() {
    std::process::exit(ppt_lab::cli::main());
}
