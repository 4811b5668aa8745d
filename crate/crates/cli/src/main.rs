fn main() {
    std::process::exit(synthkit::dispatch(std::env::args_os()));
}
