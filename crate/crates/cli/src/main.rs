fn main() {
    std::process::exit(proposal_scorer_cli::main_with_args(std::env::args_os()));
}
