fn main() {
    burstprop::cli::main()
}
