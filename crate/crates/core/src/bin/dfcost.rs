fn main() {
    std::process::exit(depthfirst::cli::main());
}
