fn main() {
    let code = wigner_ldp::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
