fn main() {
    let code = mbbt::cli::run_cli(
        std::env::args_os(),
        std::env::var(mbbt::cli::SEED_VAR).ok(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code);
}
