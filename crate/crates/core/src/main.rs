fn main() {
    std::process::exit(smile::cli::run());
}
