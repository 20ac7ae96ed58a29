fn main() {
    std::process::exit(restrictml::dispatch(std::env::args_os()));
}
