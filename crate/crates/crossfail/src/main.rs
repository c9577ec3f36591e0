fn main() {
    crossfail::harness::cli_main();
}
